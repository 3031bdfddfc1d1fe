#include <algorithm>
#include <filesystem>
#include <random>
#include <thread>

#include "crayon/annotations.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "tmpdir.hpp"

using namespace crayon;
namespace fs = std::filesystem;

namespace {

AnnotationRecord rec(const std::string& subject, const std::string& who, Answer a) {
    return {"sal:" + subject, SubjectKind::saliency, subject, who, a, "2024-01-01T00:00:00Z"};
}

}  // namespace

TEST_CASE("nine-state truth table") {
    const std::optional<Answer> states[] = {Answer::yes, Answer::no, std::nullopt};
    for (auto a : states) {
        for (auto b : states) {
            AggregatedLabel want = AggregatedLabel::excluded;
            if (a == Answer::yes && b == Answer::yes) want = AggregatedLabel::relevant;
            if (a == Answer::no && b == Answer::no) want = AggregatedLabel::irrelevant;
            CHECK(aggregate_pair(a, b) == want);

            std::vector<AnnotationRecord> rs;
            if (a) rs.push_back(rec("x", "A", *a));
            if (b) rs.push_back(rec("x", "B", *b));
            const auto sets = aggregate_saliency(rs);
            if (rs.empty()) {
                CHECK(sets.universe_size() == 0);
                continue;
            }
            CHECK(sets.relevant.count("x") == (want == AggregatedLabel::relevant ? 1u : 0u));
            CHECK(sets.irrelevant.count("x") == (want == AggregatedLabel::irrelevant ? 1u : 0u));
            CHECK(sets.excluded.count("x") == (want == AggregatedLabel::excluded ? 1u : 0u));
        }
    }
}

TEST_CASE("aggregation errors and duplicates") {
    CHECK_THROWS(aggregate_saliency({rec("x", "A", Answer::yes), rec("x", "B", Answer::yes), rec("x", "C", Answer::yes)}));
    CHECK_THROWS(aggregate_saliency({rec("x", "A", Answer::yes), rec("x", "A", Answer::no)}));
    const auto dup = aggregate_saliency({rec("x", "A", Answer::no), rec("x", "A", Answer::no), rec("x", "B", Answer::no)});
    CHECK(dup.irrelevant == std::set<std::string>{"x"});
    CHECK_THROWS(aggregate_saliency({rec("x", "A", Answer::yes), rec("x", "B", Answer::yes)}, 1));
    const auto single = aggregate_saliency({rec("x", "oracle", Answer::yes), rec("y", "oracle", Answer::no)}, 1);
    CHECK(single.relevant == std::set<std::string>{"x"});
    CHECK(single.irrelevant == std::set<std::string>{"y"});
    CHECK_THROWS(aggregate_saliency({}, 3));

    AnnotationRecord patch = rec("p", "A", Answer::yes);
    patch.subject_kind = SubjectKind::patch;
    CHECK(aggregate_saliency({patch}).universe_size() == 0);
}

TEST_CASE("aggregation is independent of record order") {
    std::mt19937_64 rng(5);
    std::vector<AnnotationRecord> rs;
    for (int i = 0; i < 40; ++i) {
        const std::string id = "img-" + std::to_string(i);
        for (const char* who : {"A", "B"}) {
            if (rng() % 4 == 0) continue;
            rs.push_back(rec(id, who, rng() % 2 ? Answer::yes : Answer::no));
        }
    }
    const auto base = aggregate_saliency(rs);
    for (int t = 0; t < 20; ++t) {
        std::shuffle(rs.begin(), rs.end(), rng);
        const auto s = aggregate_saliency(rs);
        CHECK(s.relevant == base.relevant);
        CHECK(s.irrelevant == base.irrelevant);
        CHECK(s.excluded == base.excluded);
    }
}

TEST_CASE("record JSON round trip and parse errors") {
    const auto r = rec("img-000001", "ann-7", Answer::yes);
    const auto back = AnnotationRecord::from_json(r.to_json());
    CHECK(back.task_id == r.task_id);
    CHECK(back.subject_id == r.subject_id);
    CHECK(back.annotator_id == r.annotator_id);
    CHECK(back.answer == r.answer);
    CHECK(back.timestamp == r.timestamp);
    CHECK_THROWS(parse_answer("maybe"));
    CHECK_THROWS(parse_subject_kind("neuron"));
    CHECK(utc_timestamp().back() == 'Z');
}

TEST_CASE("oracle examples") {
    const Tensor grid({2, 2}, {1.0, 0.0, 0.0, 0.0});
    CHECK(oracle_annotate(Tensor({2, 2}, {1.0, 0.0, 0.0, 0.0}), grid, 0.6) == Answer::yes);
    CHECK(oracle_annotate(Tensor({2, 2}, {0.0, 1.0, 0.5, 0.0}), grid, 0.6) == Answer::no);
    CHECK(oracle_annotate(Tensor({2, 2}, 0.0), grid, 0.6) == Answer::no);

    // Max-normalized map with 70% of its mass inside: 1 / (1 + 3/7).
    const Tensor seventy({2, 2}, {1.0, 3.0 / 7.0, 0.0, 0.0});
    CHECK((seventy[0] / (seventy[0] + seventy[1])) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(oracle_annotate(seventy, grid, 0.6) == Answer::yes);
    CHECK(oracle_annotate(seventy, grid, 0.8) == Answer::no);

    CHECK_THROWS(oracle_annotate(seventy, Tensor({1, 4}), 0.6));
    CHECK_THROWS(oracle_annotate(seventy, grid, 0.0));
    CHECK_THROWS(oracle_annotate(seventy, grid, 1.5));
}

TEST_CASE("oracle is monotone in tau") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int t = 0; t < 300; ++t) {
        Tensor map = testutil::random_tensor({4, 4}, rng, 0.0, 1.0);
        double mx = *std::max_element(map.values().begin(), map.values().end());
        for (auto& v : map.values()) v /= mx;
        Tensor grid({4, 4});
        for (auto& v : grid.values()) v = rng() % 2;
        double t1 = u(rng), t2 = u(rng);
        if (t1 > t2) std::swap(t1, t2);
        if (oracle_annotate(map, grid, t2) == Answer::yes) CHECK(oracle_annotate(map, grid, t1) == Answer::yes);
    }
}

TEST_CASE("mask pooling and patch oracle") {
    Mask m(4, 4);
    m.at(0, 0) = 1;
    m.at(3, 2) = 1;
    const Tensor g = mask_to_grid(m, 2, 2);
    CHECK(g == Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    CHECK_THROWS(mask_to_grid(m, 5, 5));

    Mask half(4, 4);
    for (int y = 0; y < 4; ++y) half.at(y, 0) = half.at(y, 1) = 1;
    CHECK(oracle_annotate_patch(half, {0, 0, 4, 4}, 0.5) == Answer::yes);
    CHECK(oracle_annotate_patch(half, {0, 0, 4, 4}, 0.6) == Answer::no);
    CHECK(oracle_annotate_patch(half, {2, 0, 4, 4}, 0.1) == Answer::no);
    CHECK_THROWS(oracle_annotate_patch(half, {0, 0, 5, 4}, 0.5));
}

TEST_CASE("subsampling") {
    RelevanceSets s;
    for (int i = 0; i < 30; ++i) {
        const std::string id = "id" + std::to_string(i);
        if (i % 3 == 0) s.relevant.insert(id);
        else if (i % 3 == 1) s.irrelevant.insert(id);
        else s.excluded.insert(id);
    }
    const auto all = subsample_annotations(s, 30, 1);
    CHECK(all.relevant == s.relevant);
    CHECK(all.irrelevant == s.irrelevant);
    CHECK(all.excluded == s.excluded);
    const auto none = subsample_annotations(s, 0, 1);
    CHECK(none.universe_size() == 0);
    const auto a = subsample_annotations(s, 10, 42), b = subsample_annotations(s, 10, 42);
    CHECK(a.universe_size() == 10);
    CHECK(a.relevant == b.relevant);
    CHECK(a.irrelevant == b.irrelevant);
    for (const auto& id : a.relevant) CHECK(s.relevant.count(id) == 1);
    for (const auto& id : a.irrelevant) CHECK(s.irrelevant.count(id) == 1);
    CHECK_THROWS(subsample_annotations(s, -1, 1));
    CHECK_THROWS(subsample_annotations(s, 31, 1));
}

TEST_CASE("concurrent appends never interleave") {
    testutil::TempDir tmp("store");
    const fs::path& dir = tmp.path;
    AnnotationStore store(dir / "a.jsonl");
    std::vector<std::thread> ts;
    for (int t = 0; t < 8; ++t) {
        ts.emplace_back([&store, t] {
            for (int i = 0; i < 50; ++i) {
                store.append(rec("img-" + std::to_string(i), "ann-" + std::to_string(t), Answer::yes));
            }
        });
    }
    for (auto& t : ts) t.join();
    const auto rs = store.read_all();
    CHECK(rs.size() == 400);
    write_annotations(rs, dir / "b.jsonl");
    CHECK(read_annotations(dir / "b.jsonl").size() == 400);
}
