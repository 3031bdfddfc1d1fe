#include <algorithm>
#include <cmath>
#include <fstream>

#include "crayon/data.hpp"
#include "crayon/metrics.hpp"
#include "doctest.h"
#include "tmpdir.hpp"

using namespace crayon;
namespace fs = std::filesystem;

namespace {

void write_png(const fs::path& p, const Tensor& img) {
    fs::create_directories(p.parent_path());
    const auto bytes = encode_png(img);
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                             static_cast<std::streamsize>(bytes.size()));
}

Tensor solid(double r, double g, double b, int size = 20) {
    Tensor t({3, size, size});
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (std::size_t p = 0; p < plane; ++p) t[p] = r, t[plane + p] = g, t[2 * plane + p] = b;
    return t;
}

double background_probe(const Dataset& d, std::uint64_t seed) {
    return linear_probe_accuracy(background_color_features(d), d.labels(), d.num_classes, seed);
}

}  // namespace

TEST_CASE("generation is deterministic under the seed") {
    SynthSpec s;
    s.per_class = 40;
    s.seed = 11;
    const Dataset a = generate_synthetic(s), b = generate_synthetic(s);
    CHECK(dataset_hash(a) == dataset_hash(b));
    s.seed = 12;
    CHECK(dataset_hash(generate_synthetic(s)) != dataset_hash(a));
    CHECK_NOTHROW(a.validate());
    CHECK(a.has_masks());
    for (const auto& e : a.examples) {
        CHECK(e.mask->count() > 0);
        for (double v : e.image.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-9);
        }
    }
}

TEST_CASE("group histogram equals the requested counts") {
    SynthSpec s;
    // Waterbirds training-split counts divided by ten.
    s.group_counts = {{350, 18}, {6, 106}};
    s.seed = 3;
    const auto h = generate_synthetic(s).group_histogram();
    CHECK(h.at({0, 0}) == 350);
    CHECK(h.at({0, 1}) == 18);
    CHECK(h.at({1, 0}) == 6);
    CHECK(h.at({1, 1}) == 106);
    CHECK(h.size() == 4);

    SynthSpec r;
    r.num_classes = 3;
    r.rho = 0.9;
    r.per_class = 100;
    const auto c = r.counts();
    for (int k = 0; k < 3; ++k) {
        CHECK(c[k][k] == 90);
        CHECK(c[k][(k + 1) % 3] + c[k][(k + 2) % 3] == 10);
    }
    const auto h3 = generate_synthetic(r).group_histogram();
    for (const auto& [g, n] : h3) CHECK(n == c[g.class_label][g.spurious_label]);

    SynthSpec bad;
    bad.group_counts = {{10, 0}, {0, 0}};
    CHECK_THROWS(generate_synthetic(bad));
    bad.group_counts = {};
    bad.rho = 1.5;
    CHECK_THROWS(generate_synthetic(bad));
}

TEST_CASE("SynthSpec JSON round trip") {
    SynthSpec s;
    s.num_classes = 4;
    s.rho = 0.8;
    s.seed = 99;
    s.group_counts = {{1, 2, 3, 4}, {4, 3, 2, 1}, {1, 1, 1, 1}, {2, 2, 2, 2}};
    const SynthSpec t = synth_spec_from_json(synth_spec_to_json(s));
    CHECK(t.num_classes == 4);
    CHECK(t.rho == 0.8);
    CHECK(t.seed == 99);
    CHECK(t.group_counts == s.group_counts);
    CHECK(dataset_hash(generate_synthetic(t)) == dataset_hash(generate_synthetic(s)));
}

TEST_CASE("background probe: chance at rho 0.5, near perfect at rho 1") {
    SynthSpec s;
    s.per_class = 1000;
    s.rho = 0.5;
    s.seed = 17;
    const double chance = background_probe(generate_synthetic(s), 5);
    CHECK(std::abs(chance - 0.5) <= 0.05);
    s.rho = 1.0;
    s.per_class = 300;
    CHECK(background_probe(generate_synthetic(s), 5) >= 0.98);
}

TEST_CASE("mixed sets keep foregrounds and labels") {
    SynthSpec s;
    s.num_classes = 3;
    s.per_class = 200;
    s.seed = 21;
    const Dataset d = generate_synthetic(s);
    const MixedSets m = make_mixed_sets(d, 8);
    for (const Dataset* mixed : {&m.mixed_same, &m.mixed_rand}) {
        REQUIRE(mixed->size() == d.size());
        double linf = 0.0;
        bool any_background_changed = false;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const auto& a = d.examples[i];
            const auto& b = mixed->examples[i];
            CHECK(a.class_label == b.class_label);
            const std::size_t plane = a.mask->bits.size();
            for (std::size_t p = 0; p < plane; ++p) {
                for (int c = 0; c < 3; ++c) {
                    const double diff = std::abs(a.image[c * plane + p] - b.image[c * plane + p]);
                    if (a.mask->bits[p]) linf = std::max(linf, diff);
                    else if (diff > 0) any_background_changed = true;
                }
            }
        }
        CHECK(linf == 0.0);
        CHECK(any_background_changed);
    }
    // Mixed-Same backgrounds keep the class skew, Mixed-Rand backgrounds lose it.
    CHECK(background_probe(m.mixed_same, 4) > 0.85);
    CHECK(std::abs(background_probe(m.mixed_rand, 4) - 1.0 / 3) <= 0.05);
}

TEST_CASE("mixed sets: single-class degeneracy and errors") {
    SynthSpec s;
    s.num_classes = 1;
    s.per_class = 30;
    const Dataset d = generate_synthetic(s);
    const MixedSets m = make_mixed_sets(d, 1);
    CHECK(dataset_hash(m.mixed_same) == dataset_hash(m.mixed_rand));

    Dataset one = d;
    one.examples.resize(1);
    CHECK_THROWS(make_mixed_sets(one, 1));
    Dataset bare = d;
    bare.examples[0].mask.reset();
    CHECK_THROWS(make_mixed_sets(bare, 1));
}

TEST_CASE("save and load round trip is bit identical") {
    testutil::TempDir tmp("data_rt");
    SynthSpec s;
    s.num_classes = 3;
    s.per_class = 12;
    s.seed = 4;
    const Dataset d = generate_synthetic(s);
    save_dataset(d, tmp.path);
    const Dataset back = load_grouped_dataset(tmp.path, "crayon");
    REQUIRE(back.size() == d.size());
    CHECK(back.num_classes == 3);
    CHECK(back.class_names == d.class_names);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.examples[i].image_id == d.examples[i].image_id);
        CHECK(back.examples[i].image == d.examples[i].image);
        CHECK(back.examples[i].mask == d.examples[i].mask);
        CHECK(back.examples[i].group() == d.examples[i].group());
    }
    CHECK(dataset_hash(back) == dataset_hash(d));
    CHECK_THROWS(load_grouped_dataset(tmp.path / "missing", "crayon"));
    CHECK_THROWS(load_grouped_dataset(tmp.path, "coco"));
}

TEST_CASE("waterbirds layout") {
    testutil::TempDir tmp("wb");
    std::ofstream csv(tmp.path / "metadata.csv");
    csv << "img_id,img_filename,y,split,place\n";
    int id = 0;
    for (int y = 0; y < 2; ++y) {
        for (int place = 0; place < 2; ++place) {
            for (int k = 0; k < 2; ++k, ++id) {
                const std::string file = "birds/" + std::to_string(id) + ".png";
                write_png(tmp.path / file, solid(0.1 * id / 8.0, 0.5, 0.5));
                csv << id << "," << file << "," << y << "," << (k == 0 ? 0 : 2) << "," << place << "\r\n";
            }
        }
    }
    csv.close();
    LoadOptions o;
    o.resize = 16;
    o.crop = 12;
    const Dataset train = load_grouped_dataset(tmp.path, "waterbirds", o);
    CHECK(train.size() == 4);
    CHECK(train.group_histogram().size() == 4);
    CHECK(train.image_size() == 12);
    // Normalized green channel: (0.5 - 0.456) / 0.224, to PNG precision.
    CHECK(train.examples[0].image[144] == doctest::Approx((128.0 / 255 - 0.456) / 0.224).epsilon(1e-9));
    o.split = "test";
    CHECK(load_grouped_dataset(tmp.path, "waterbirds", o).size() == 4);
    o.split = "val";
    CHECK(load_grouped_dataset(tmp.path, "waterbirds", o).size() == 0);
    o.split = "train";
    o.crop = 20;
    CHECK_THROWS(load_grouped_dataset(tmp.path, "waterbirds", o));
}

TEST_CASE("celeba layout") {
    testutil::TempDir tmp("celeba");
    std::ofstream attrs(tmp.path / "list_attr_celeba.csv"), parts(tmp.path / "list_eval_partition.csv");
    attrs << "image_id,Bald,Blond_Hair,Male\n";
    parts << "image_id,partition\n";
    for (int i = 0; i < 6; ++i) {
        const std::string name = "00000" + std::to_string(i) + ".jpg";
        write_png(tmp.path / "img_align_celeba" / name, solid(0.3, 0.3, 0.3));
        attrs << name << ",-1," << (i % 2 ? "1" : "-1") << "," << (i < 3 ? "1" : "-1") << "\n";
        parts << name << "," << (i == 5 ? 1 : 0) << "\n";
    }
    attrs.close();
    parts.close();
    LoadOptions o;
    o.resize = 8;
    o.crop = 8;
    o.normalize = false;
    const Dataset d = load_grouped_dataset(tmp.path, "celeba", o);
    CHECK(d.size() == 5);
    CHECK(d.examples[1].class_label == 1);
    CHECK(d.examples[1].spurious_label == 1);
    CHECK(d.examples[4].spurious_label == 0);
    CHECK(d.examples[0].image[0] == doctest::Approx(77.0 / 255));
}

TEST_CASE("in9 layout") {
    testutil::TempDir tmp("in9");
    const char* classes[] = {"00_dog", "01_bird", "02_wheeled vehicle"};
    for (const char* c : classes) {
        for (int i = 0; i < 2; ++i) {
            write_png(tmp.path / "mixed_rand" / "val" / c / (std::to_string(i) + ".png"), solid(0.2, 0.4, 0.6));
        }
    }
    LoadOptions o;
    o.resize = 10;
    o.crop = 8;
    o.split = "val";
    o.in9_variant = "mixed_rand";
    const Dataset d = load_grouped_dataset(tmp.path, "in9", o);
    CHECK(d.num_classes == 3);
    CHECK(d.size() == 6);
    CHECK(d.class_names[2] == "02_wheeled vehicle");
    CHECK(d.examples[5].class_label == 2);
    CHECK(d.examples[5].spurious_label == -1);
    o.in9_variant = "only_fg";
    CHECK_THROWS(load_grouped_dataset(tmp.path, "in9", o));
}
