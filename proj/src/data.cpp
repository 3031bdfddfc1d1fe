#include "crayon/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "crayon/hash.hpp"
#include "json.hpp"

namespace crayon {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::string group_name(const GroupId& g) {
    return "y" + std::to_string(g.class_label) + "_a" + std::to_string(g.spurious_label);
}

int Dataset::image_size() const {
    if (examples.empty()) throw std::logic_error("image_size: empty dataset");
    return examples.front().image.dim(2);
}

bool Dataset::has_masks() const {
    return !examples.empty() &&
           std::all_of(examples.begin(), examples.end(), [](const auto& e) { return e.mask.has_value(); });
}

void Dataset::validate() const {
    if (num_classes < 1) throw std::invalid_argument("dataset " + name + ": num_classes must be positive");
    Dims first;
    for (const auto& e : examples) {
        if (e.class_label < 0 || e.class_label >= num_classes) {
            throw std::invalid_argument("example " + e.image_id + ": class label out of range");
        }
        if (e.image.rank() != 3 || e.image.dim(0) != 3) {
            throw std::invalid_argument("example " + e.image_id + ": image must be [3,H,W]");
        }
        if (first.empty()) first = e.image.dims();
        if (e.image.dims() != first) throw std::invalid_argument("example " + e.image_id + ": inconsistent image size");
        if (e.mask) {
            if (e.mask->height != first[1] || e.mask->width != first[2]) {
                throw std::invalid_argument("example " + e.image_id + ": mask size differs from image");
            }
            if (e.mask->count() == 0) throw std::invalid_argument("example " + e.image_id + ": empty mask");
        }
    }
}

Tensor Dataset::images(const std::vector<int>& indices) const {
    if (examples.empty()) throw std::logic_error("images: empty dataset");
    Dims d = examples.front().image.dims();
    const std::size_t per = examples.front().image.size();
    Tensor out({static_cast<int>(indices.size()), d[0], d[1], d[2]});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& img = examples.at(static_cast<std::size_t>(indices[i])).image;
        std::copy(img.data(), img.data() + per, out.data() + i * per);
    }
    return out;
}

Tensor Dataset::all_images() const {
    std::vector<int> idx(examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return images(idx);
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.class_label);
    return out;
}

std::vector<int> Dataset::labels(const std::vector<int>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(examples.at(static_cast<std::size_t>(i)).class_label);
    return out;
}

std::map<GroupId, int> Dataset::group_histogram() const {
    std::map<GroupId, int> h;
    for (const auto& e : examples) ++h[e.group()];
    return h;
}

std::optional<int> Dataset::index_of(const std::string& image_id) const {
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].image_id == image_id) return static_cast<int>(i);
    }
    return std::nullopt;
}

std::string Dataset::class_name(int c) const {
    if (c >= 0 && static_cast<std::size_t>(c) < class_names.size()) return class_names[static_cast<std::size_t>(c)];
    return "class " + std::to_string(c);
}

std::uint64_t dataset_hash(const Dataset& d) {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : d.examples) {
        h = fnv1a(h, e.image_id);
        h = fnv1a(h, &e.class_label, sizeof(int));
        h = fnv1a(h, &e.spurious_label, sizeof(int));
        h = fnv1a(h, e.image.data(), e.image.size() * sizeof(double));
        if (e.mask) h = fnv1a(h, e.mask->bits.data(), e.mask->bits.size());
    }
    return h;
}

// ---- synthetic generator ---------------------------------------------------

namespace {

const std::array<std::array<double, 3>, 9> kPalette = {{{0.8, 0.2, 0.2},
                                                        {0.2, 0.3, 0.8},
                                                        {0.2, 0.7, 0.3},
                                                        {0.8, 0.8, 0.2},
                                                        {0.7, 0.2, 0.8},
                                                        {0.2, 0.8, 0.8},
                                                        {0.9, 0.5, 0.1},
                                                        {0.4, 0.2, 0.1},
                                                        {0.9, 0.6, 0.7}}};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

bool inside_shape(int shape, double dx, double dy, double r, double bw) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (shape) {
        case 0:  // hbar
            return ax <= r && ay <= r * bw;
        case 1:  // vbar
            return ax <= r * bw && ay <= r;
        case 2:  // triangle
            return dy <= r * 0.8 && dy >= -r && ax <= (dy + r) * 0.6;
        case 3:  // cross
            return (ax <= r * 0.3 && ay <= r) || (ay <= r * 0.3 && ax <= r);
        case 4:  // circle
            return dx * dx + dy * dy <= r * r;
        case 5:  // square
            return ax <= 0.75 * r && ay <= 0.75 * r;
        case 6:  // diamond
            return ax + ay <= r;
        case 7: {  // ring
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.3 * r * r;
        }
        case 8:  // ell
            return (ax <= r && dy >= 0.5 * r && dy <= r) || (dx >= -r && dx <= -0.5 * r && ay <= r);
        default:
            throw std::invalid_argument("no synthetic shape for class " + std::to_string(shape));
    }
}

GroupedExample render_example(const SynthSpec& s, int cls, int bg, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n = s.image_size;
    const double rmax = std::min(s.radius_max, (n - 2) / 2.0 - 0.5);
    const double rmin = std::min(s.radius_min, rmax);
    const double r = std::uniform_real_distribution<double>(rmin, rmax)(rng);
    std::uniform_real_distribution<double> centre(r + 1.0, n - r - 1.0);
    const double cx = centre(rng);
    const double cy = centre(rng);

    GroupedExample e;
    e.class_label = cls;
    e.spurious_label = bg;
    e.image = Tensor({3, n, n});
    Mask mask(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            mask.at(y, x) = inside_shape(cls, x + 0.5 - cx, y + 0.5 - cy, r, s.bar_width) ? 1 : 0;
        }
    }
    if (mask.count() == 0) mask.at(static_cast<int>(cy), static_cast<int>(cx)) = 1;

    const auto& base = kPalette[static_cast<std::size_t>(bg)];
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int c = 0; c < 3; ++c) {
        const double level = 0.5 + s.background_contrast * (base[static_cast<std::size_t>(c)] - 0.5);
        for (std::size_t p = 0; p < plane; ++p) e.image[c * plane + p] = level + s.noise * normal(rng);
    }
    const double jitter = std::uniform_real_distribution<double>(-s.foreground_jitter, s.foreground_jitter)(rng);
    double gray;
    if (s.class_intensity) {
        gray = (s.num_classes > 1 ? 0.25 + 0.5 * cls / (s.num_classes - 1) : 0.5) + jitter;
    } else {
        gray = std::uniform_real_distribution<double>(0.3, 0.9)(rng) + jitter;
    }
    gray = std::clamp(gray, 0.0, 1.0);
    std::array<double, 3> tint{};
    for (auto& t : tint) t = gray + 0.1 * normal(rng);
    for (std::size_t p = 0; p < plane; ++p) {
        if (!mask.bits[p]) continue;
        for (int c = 0; c < 3; ++c) e.image[c * plane + p] = tint[static_cast<std::size_t>(c)] + s.noise * normal(rng);
    }
    for (auto& v : e.image.values()) v = quantize(v);
    e.mask = std::move(mask);
    return e;
}

}  // namespace

const std::vector<std::string>& synthetic_shape_names() {
    static const std::vector<std::string> names = {"hbar",   "vbar",   "triangle", "cross", "circle",
                                                   "square", "diamond", "ring",    "ell"};
    return names;
}

std::vector<std::vector<int>> SynthSpec::counts() const {
    if (!group_counts.empty()) return group_counts;
    if (num_classes < 1) throw std::invalid_argument("synthetic spec: num_classes must be positive");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("synthetic spec: rho must lie in [0,1]");
    std::vector<std::vector<int>> c(static_cast<std::size_t>(num_classes),
                                    std::vector<int>(static_cast<std::size_t>(num_classes), 0));
    const int majority = num_classes == 1 ? per_class : static_cast<int>(std::lround(per_class * rho));
    for (int k = 0; k < num_classes; ++k) {
        auto& row = c[static_cast<std::size_t>(k)];
        row[static_cast<std::size_t>(k)] = majority;
        if (num_classes == 1) continue;
        const int rest = per_class - majority;
        int slot = 0;
        for (int b = 0; b < num_classes; ++b) {
            if (b == k) continue;
            row[static_cast<std::size_t>(b)] = rest / (num_classes - 1) + (slot < rest % (num_classes - 1) ? 1 : 0);
            ++slot;
        }
    }
    return c;
}

SynthSpec SynthSpec::balanced(int num_classes, int per_group, std::uint64_t seed) {
    SynthSpec s;
    s.num_classes = num_classes;
    s.seed = seed;
    s.group_counts.assign(static_cast<std::size_t>(num_classes),
                          std::vector<int>(static_cast<std::size_t>(num_classes), per_group));
    return s;
}

SynthSpec synth_spec_from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    SynthSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.rho = j.value("rho", s.rho);
    s.per_class = j.value("per_class", s.per_class);
    if (j.contains("group_counts")) s.group_counts = j.at("group_counts").get<std::vector<std::vector<int>>>();
    s.image_size = j.value("image_size", s.image_size);
    s.seed = j.value("seed", s.seed);
    s.id_prefix = j.value("id_prefix", s.id_prefix);
    s.noise = j.value("noise", s.noise);
    s.background_contrast = j.value("background_contrast", s.background_contrast);
    s.radius_min = j.value("radius_min", s.radius_min);
    s.radius_max = j.value("radius_max", s.radius_max);
    s.bar_width = j.value("bar_width", s.bar_width);
    s.foreground_jitter = j.value("foreground_jitter", s.foreground_jitter);
    s.class_intensity = j.value("class_intensity", s.class_intensity);
    return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
    json j = {{"num_classes", s.num_classes},
              {"rho", s.rho},
              {"per_class", s.per_class},
              {"image_size", s.image_size},
              {"seed", s.seed},
              {"id_prefix", s.id_prefix},
              {"noise", s.noise},
              {"background_contrast", s.background_contrast},
              {"radius_min", s.radius_min},
              {"radius_max", s.radius_max},
              {"bar_width", s.bar_width},
              {"foreground_jitter", s.foreground_jitter},
              {"class_intensity", s.class_intensity}};
    if (!s.group_counts.empty()) j["group_counts"] = s.group_counts;
    return j.dump(2);
}

Dataset generate_synthetic(const SynthSpec& spec) {
    const auto counts = spec.counts();
    const int k = static_cast<int>(counts.size());
    if (k < 1 || k > static_cast<int>(kPalette.size())) {
        throw std::invalid_argument("synthetic spec: between 1 and 9 classes supported");
    }
    if (spec.num_classes != k) throw std::invalid_argument("synthetic spec: group_counts rows must equal num_classes");
    if (spec.image_size < 8) throw std::invalid_argument("synthetic spec: image_size must be at least 8");
    for (int c = 0; c < k; ++c) {
        const auto& row = counts[static_cast<std::size_t>(c)];
        if (row.size() > kPalette.size()) throw std::invalid_argument("synthetic spec: at most 9 backgrounds");
        int total = 0;
        for (int v : row) {
            if (v < 0) throw std::invalid_argument("synthetic spec: negative group count");
            total += v;
        }
        if (total == 0) throw std::invalid_argument("synthetic spec: class " + std::to_string(c) + " has no images");
    }

    Dataset d;
    d.name = "synthetic";
    d.num_classes = k;
    d.class_names.assign(synthetic_shape_names().begin(), synthetic_shape_names().begin() + k);
    std::size_t index = 0;
    char id[64];
    for (int c = 0; c < k; ++c) {
        const auto& row = counts[static_cast<std::size_t>(c)];
        for (int b = 0; b < static_cast<int>(row.size()); ++b) {
            for (int i = 0; i < row[static_cast<std::size_t>(b)]; ++i, ++index) {
                GroupedExample e = render_example(spec, c, b, index);
                std::snprintf(id, sizeof(id), "%s-%06zu", spec.id_prefix.c_str(), index);
                e.image_id = id;
                d.examples.push_back(std::move(e));
            }
        }
    }
    return d;
}

// ---- Mixed-Same / Mixed-Rand -------------------------------------------------

namespace {

std::array<double, 3> mean_background(const GroupedExample& e) {
    const std::size_t plane = e.mask->bits.size();
    std::array<double, 3> sum{};
    std::size_t n = 0;
    for (std::size_t p = 0; p < plane; ++p) {
        if (e.mask->bits[p]) continue;
        for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(c)] += e.image[c * plane + p];
        ++n;
    }
    for (auto& v : sum) v = n ? quantize(v / static_cast<double>(n)) : 0.0;
    return sum;
}

Dataset mix(const Dataset& d, bool same_class, std::uint64_t seed, const std::vector<std::array<double, 3>>& fill) {
    std::mt19937_64 rng(seed);
    std::map<int, std::vector<int>> by_class;
    std::vector<int> everyone;
    for (std::size_t i = 0; i < d.size(); ++i) {
        by_class[d.examples[i].class_label].push_back(static_cast<int>(i));
        everyone.push_back(static_cast<int>(i));
    }
    Dataset out;
    out.name = d.name + (same_class ? "-mixed-same" : "-mixed-rand");
    out.num_classes = d.num_classes;
    out.class_names = d.class_names;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& self = d.examples[i];
        const auto& pool = same_class ? by_class[self.class_label] : everyone;
        // Uniform over the pool minus self.
        const auto pick = std::uniform_int_distribution<std::size_t>(0, pool.size() - 2)(rng);
        const auto self_pos = static_cast<std::size_t>(
            std::find(pool.begin(), pool.end(), static_cast<int>(i)) - pool.begin());
        const auto donor_index = static_cast<std::size_t>(pool[pick >= self_pos ? pick + 1 : pick]);
        const auto& donor = d.examples[donor_index];

        GroupedExample e = self;
        e.spurious_label = donor.spurious_label;
        const std::size_t plane = self.mask->bits.size();
        for (std::size_t p = 0; p < plane; ++p) {
            if (self.mask->bits[p]) continue;
            for (int c = 0; c < 3; ++c) {
                e.image[c * plane + p] =
                    donor.mask->bits[p] ? fill[donor_index][static_cast<std::size_t>(c)] : donor.image[c * plane + p];
            }
        }
        out.examples.push_back(std::move(e));
    }
    return out;
}

}  // namespace

MixedSets make_mixed_sets(const Dataset& d, std::uint64_t seed) {
    if (!d.has_masks()) throw std::invalid_argument("make_mixed_sets: every example needs a foreground mask");
    std::map<int, int> per_class;
    for (const auto& e : d.examples) ++per_class[e.class_label];
    for (const auto& [c, n] : per_class) {
        if (n < 2) throw std::invalid_argument("make_mixed_sets: class " + std::to_string(c) + " has a single image");
    }
    std::vector<std::array<double, 3>> fill;
    fill.reserve(d.size());
    for (const auto& e : d.examples) fill.push_back(mean_background(e));
    return {mix(d, true, seed, fill), mix(d, false, seed, fill)};
}

// ---- persistence -----------------------------------------------------------------

namespace {

cv::Mat to_mat(const Tensor& img) {
    const int h = img.dim(1), w = img.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            for (int c = 0; c < 3; ++c) {
                // OpenCV stores BGR.
                row[x][2 - c] = static_cast<std::uint8_t>(std::lround(std::clamp(img[c * plane + p], 0.0, 1.0) * 255.0));
            }
        }
    }
    return m;
}

Tensor from_mat_u8(const cv::Mat& bgr) {
    const int h = bgr.rows, w = bgr.cols;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor t({3, h, w});
    for (int y = 0; y < h; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            for (int c = 0; c < 3; ++c) t[c * plane + p] = row[x][2 - c] / 255.0;
        }
    }
    return t;
}

cv::Mat read_color(const fs::path& p) {
    cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("cannot read image " + p.string());
    return m;
}

void write_png(const fs::path& p, const cv::Mat& m) {
    if (!cv::imwrite(p.string(), m)) throw std::runtime_error("cannot write image " + p.string());
}

std::string safe_file_name(const std::string& id) {
    std::string s = id;
    for (auto& ch : s) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
    }
    return s;
}

}  // namespace

void save_dataset(const Dataset& d, const fs::path& dir) {
    d.validate();
    fs::create_directories(dir / "images");
    if (d.has_masks()) fs::create_directories(dir / "masks");
    std::ofstream meta(dir / "metadata.jsonl");
    if (!meta) throw std::runtime_error("cannot write " + (dir / "metadata.jsonl").string());
    for (const auto& e : d.examples) {
        const std::string base = safe_file_name(e.image_id);
        json j = {{"image_id", e.image_id},
                  {"class", e.class_label},
                  {"spurious", e.spurious_label},
                  {"image_file", "images/" + base + ".png"}};
        write_png(dir / "images" / (base + ".png"), to_mat(e.image));
        if (e.mask) {
            cv::Mat m(e.mask->height, e.mask->width, CV_8UC1);
            for (std::size_t p = 0; p < e.mask->bits.size(); ++p) m.data[p] = e.mask->bits[p] ? 255 : 0;
            write_png(dir / "masks" / (base + ".png"), m);
            j["mask_file"] = "masks/" + base + ".png";
        }
        meta << j.dump() << '\n';
    }
    json info = {{"name", d.name}, {"num_classes", d.num_classes}, {"class_names", d.class_names}, {"layout", "crayon"}};
    std::ofstream(dir / "dataset.json") << info.dump(2) << '\n';
}

namespace {

Dataset load_crayon(const fs::path& dir) {
    const fs::path meta_path = dir / "metadata.jsonl";
    std::ifstream meta(meta_path);
    if (!meta) throw std::runtime_error("missing metadata file " + meta_path.string());
    Dataset d;
    d.name = dir.filename().string();
    int max_class = -1;
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        GroupedExample e;
        e.image_id = j.at("image_id").get<std::string>();
        e.class_label = j.at("class").get<int>();
        e.spurious_label = j.value("spurious", 0);
        const std::string file = j.value("image_file", "images/" + safe_file_name(e.image_id) + ".png");
        e.image = from_mat_u8(read_color(dir / file));
        if (j.contains("mask_file") && !j.at("mask_file").is_null()) {
            cv::Mat m = cv::imread((dir / j.at("mask_file").get<std::string>()).string(), cv::IMREAD_GRAYSCALE);
            if (m.empty()) throw std::runtime_error("cannot read mask for " + e.image_id);
            Mask mask(m.rows, m.cols);
            for (int y = 0; y < m.rows; ++y) {
                for (int x = 0; x < m.cols; ++x) mask.at(y, x) = m.at<std::uint8_t>(y, x) > 127 ? 1 : 0;
            }
            e.mask = std::move(mask);
        }
        max_class = std::max(max_class, e.class_label);
        d.examples.push_back(std::move(e));
    }
    d.num_classes = max_class + 1;
    if (fs::exists(dir / "dataset.json")) {
        const json info = json::parse(std::ifstream(dir / "dataset.json"));
        d.name = info.value("name", d.name);
        d.num_classes = std::max(d.num_classes, info.value("num_classes", 0));
        d.class_names = info.value("class_names", std::vector<std::string>{});
    }
    d.validate();
    return d;
}

Tensor preprocess(const cv::Mat& bgr, const LoadOptions& o) {
    if (o.crop > o.resize) throw std::invalid_argument("crop size exceeds resize size");
    cv::Mat resized;
    cv::resize(bgr, resized, cv::Size(o.resize, o.resize), 0, 0, cv::INTER_LINEAR);
    const int off = (o.resize - o.crop) / 2;
    Tensor t = from_mat_u8(resized(cv::Rect(off, off, o.crop, o.crop)).clone());
    if (o.normalize) {
        static const double mean[3] = {0.485, 0.456, 0.406};
        static const double stdev[3] = {0.229, 0.224, 0.225};
        const std::size_t plane = static_cast<std::size_t>(o.crop) * o.crop;
        for (int c = 0; c < 3; ++c) {
            for (std::size_t p = 0; p < plane; ++p) t[c * plane + p] = (t[c * plane + p] - mean[c]) / stdev[c];
        }
    }
    return t;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    return out;
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw std::runtime_error("csv column missing: " + name);
        return static_cast<std::size_t>(it - header.begin());
    }
};

Csv read_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("missing metadata file " + p.string());
    Csv csv;
    std::string line;
    if (std::getline(in, line)) csv.header = split_csv(line);
    while (std::getline(in, line)) {
        if (!line.empty()) csv.rows.push_back(split_csv(line));
    }
    return csv;
}

int split_code(const std::string& split) {
    if (split == "train") return 0;
    if (split == "val") return 1;
    if (split == "test") return 2;
    throw std::invalid_argument("unknown split: " + split);
}

Dataset load_waterbirds(const fs::path& dir, const LoadOptions& o) {
    const Csv csv = read_csv(dir / "metadata.csv");
    const auto c_id = csv.column("img_id"), c_file = csv.column("img_filename"), c_y = csv.column("y"),
               c_split = csv.column("split"), c_place = csv.column("place");
    const int want = split_code(o.split);
    Dataset d;
    d.name = "waterbirds";
    d.num_classes = 2;
    d.class_names = {"landbird", "waterbird"};
    for (const auto& row : csv.rows) {
        if (std::stoi(row.at(c_split)) != want) continue;
        GroupedExample e;
        e.image_id = row.at(c_id);
        e.class_label = std::stoi(row.at(c_y));
        e.spurious_label = std::stoi(row.at(c_place));
        e.image = preprocess(read_color(dir / row.at(c_file)), o);
        d.examples.push_back(std::move(e));
    }
    d.validate();
    return d;
}

Dataset load_celeba(const fs::path& dir, const LoadOptions& o) {
    const Csv attrs = read_csv(dir / "list_attr_celeba.csv");
    const Csv parts = read_csv(dir / "list_eval_partition.csv");
    std::map<std::string, int> partition;
    const auto p_id = parts.column("image_id"), p_part = parts.column("partition");
    for (const auto& row : parts.rows) partition[row.at(p_id)] = std::stoi(row.at(p_part));
    const auto a_id = attrs.column("image_id"), a_blond = attrs.column("Blond_Hair"), a_male = attrs.column("Male");
    fs::path image_dir = dir / "img_align_celeba";
    if (fs::exists(image_dir / "img_align_celeba")) image_dir /= "img_align_celeba";
    const int want = split_code(o.split);
    Dataset d;
    d.name = "celeba";
    d.num_classes = 2;
    d.class_names = {"not blond", "blond"};
    for (const auto& row : attrs.rows) {
        const std::string& id = row.at(a_id);
        const auto it = partition.find(id);
        if (it == partition.end() || it->second != want) continue;
        GroupedExample e;
        e.image_id = id;
        e.class_label = row.at(a_blond) == "1" ? 1 : 0;
        e.spurious_label = row.at(a_male) == "1" ? 1 : 0;
        e.image = preprocess(read_color(image_dir / id), o);
        d.examples.push_back(std::move(e));
    }
    d.validate();
    return d;
}

// <dir>/<variant>/<split>/<class>/<image>, or <dir>/<split>/<class>/<image>.
// No attribute labels: spurious_label is -1.
Dataset load_in9(const fs::path& dir, const LoadOptions& o) {
    fs::path root = dir / o.in9_variant / o.split;
    if (!fs::is_directory(root)) root = dir / o.split;
    if (!fs::is_directory(root)) throw std::runtime_error("missing image folder " + root.string());
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    Dataset d;
    d.name = "in9-" + o.in9_variant;
    d.num_classes = static_cast<int>(class_dirs.size());
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        d.class_names.push_back(class_dirs[c].filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            GroupedExample e;
            e.image_id = class_dirs[c].filename().string() + "/" + f.filename().string();
            e.class_label = static_cast<int>(c);
            e.spurious_label = -1;
            e.image = preprocess(read_color(f), o);
            d.examples.push_back(std::move(e));
        }
    }
    d.validate();
    return d;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("encode_png: expected [3,H,W]");
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(".png", to_mat(image), bytes)) throw std::runtime_error("PNG encoding failed");
    return bytes;
}

Dataset load_grouped_dataset(const fs::path& dir, const std::string& layout, const LoadOptions& options) {
    if (layout == "crayon" || layout == "synthetic") return load_crayon(dir);
    if (layout == "waterbirds") return load_waterbirds(dir, options);
    if (layout == "celeba") return load_celeba(dir, options);
    if (layout == "in9") return load_in9(dir, options);
    throw std::invalid_argument("unknown dataset layout: " + layout);
}

}  // namespace crayon
