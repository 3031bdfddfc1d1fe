#include <algorithm>
#include <numeric>
#include <random>

#include "crayon/metrics.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace crayon;

namespace {

std::map<GroupId, GroupStats> groups_with(const std::vector<std::pair<int, int>>& correct_total) {
    std::map<GroupId, GroupStats> g;
    for (std::size_t i = 0; i < correct_total.size(); ++i) {
        g[{static_cast<int>(i / 2), static_cast<int>(i % 2)}] = {correct_total[i].first, correct_total[i].second};
    }
    return g;
}

// Reads only foreground pixels: mean gray level against the midpoint of the class levels.
int foreground_classifier(const GroupedExample& e) {
    double sum = 0.0;
    const int hw = e.image.dim(1) * e.image.dim(2);
    for (int p = 0; p < hw; ++p) {
        if (!e.mask->bits[p]) continue;
        sum += (e.image[p] + e.image[hw + p] + e.image[2 * hw + p]) / 3.0;
    }
    return sum / static_cast<double>(e.mask->count()) > 0.5 ? 1 : 0;
}

}  // namespace

TEST_CASE("WGA and MGA hand example") {
    const auto r = make_report(groups_with({{9, 10}, {8, 10}, {5, 10}, {7, 10}}));
    CHECK(r.wga == 0.5);
    CHECK(r.mga == doctest::Approx(0.725).epsilon(1e-15));
    CHECK(r.average_accuracy == doctest::Approx(0.725).epsilon(1e-15));
    CHECK(percent(r.mga) == "72.50");

    const auto eq = make_report(groups_with({{3, 4}, {6, 8}, {30, 40}}));
    CHECK(eq.wga == 0.75);
    CHECK(eq.mga == 0.75);

    CHECK_THROWS(make_report(groups_with({{1, 2}, {0, 0}})));
    CHECK_THROWS(make_report({}));
}

TEST_CASE("group_metrics from predictions") {
    Dataset d;
    d.num_classes = 2;
    const int cls[] = {0, 0, 0, 1, 1, 1};
    const int bg[] = {0, 0, 1, 1, 1, 0};
    for (int i = 0; i < 6; ++i) d.examples.push_back({"e" + std::to_string(i), Tensor({3, 2, 2}), cls[i], bg[i], {}});
    const auto r = group_metrics({0, 1, 0, 1, 1, 0}, d);
    CHECK(r.per_group.at({0, 0}).correct == 1);
    CHECK(r.per_group.at({0, 0}).total == 2);
    CHECK(r.wga == 0.0);
    CHECK(r.mga == doctest::Approx((0.5 + 1.0 + 1.0 + 0.0) / 4));
    CHECK(r.average_accuracy == doctest::Approx(4.0 / 6));
    CHECK(accuracy({0, 1, 0, 1, 1, 0}, d.labels()) == doctest::Approx(4.0 / 6));
    CHECK_THROWS(group_metrics({0, 1}, d));
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["groups"].size() == 4);
}

TEST_CASE("BG-Gap examples") {
    const auto b = background_metrics(0.9126, 0.7827);
    CHECK(std::abs(b.bg_gap - 0.1299) < 1e-12);
    CHECK(percent(b.bg_gap) == "12.99");
    CHECK(percent(b.mixed_rand_accuracy) == "78.27");
    CHECK(background_metrics(0.6, 0.6).bg_gap == 0.0);
    CHECK(background_metrics(0.5, 0.7).bg_gap < 0.0);
}

TEST_CASE("foreground-only classifier has no background gap") {
    SynthSpec s = SynthSpec::balanced(2, 100, 77);
    const Dataset d = generate_synthetic(s);
    const MixedSets m = make_mixed_sets(d, 3);
    auto acc = [](const Dataset& x) {
        std::vector<int> p;
        for (const auto& e : x.examples) p.push_back(foreground_classifier(e));
        return accuracy(p, x.labels());
    };
    const double same = acc(m.mixed_same), rand = acc(m.mixed_rand);
    CHECK(same > 0.7);
    CHECK(std::abs(background_metrics(same, rand).bg_gap) <= 0.01);
}

TEST_CASE("random reports satisfy WGA <= MGA <= max and the weighted-mean identity") {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 1000; ++t) {
        const int n = 1 + static_cast<int>(rng() % 12);
        std::map<GroupId, GroupStats> g;
        int correct = 0, total = 0;
        for (int i = 0; i < n; ++i) {
            const int tot = 1 + static_cast<int>(rng() % 200);
            const int c = static_cast<int>(rng() % (tot + 1));
            g[{i, 0}] = {c, tot};
            correct += c;
            total += tot;
        }
        const auto r = make_report(g);
        double mx = 0.0;
        for (const auto& [id, s] : g) mx = std::max(mx, s.accuracy());
        CHECK(r.wga <= r.mga + 1e-15);
        CHECK(r.mga <= mx + 1e-15);
        CHECK(r.wga >= 0.0);
        CHECK(mx <= 1.0);
        CHECK(r.average_accuracy == doctest::Approx(static_cast<double>(correct) / total));
    }
}

TEST_CASE("metrics ignore test-set order") {
    const Dataset d = generate_synthetic(SynthSpec::balanced(2, 20, 5));
    std::vector<int> pred;
    std::mt19937_64 rng(1);
    for (std::size_t i = 0; i < d.size(); ++i) pred.push_back(static_cast<int>(rng() % 2));
    const auto base = group_metrics(pred, d);
    std::vector<std::size_t> perm(d.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Dataset shuffled = d;
    std::vector<int> p2;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled.examples[i] = d.examples[perm[i]];
        p2.push_back(pred[perm[i]]);
    }
    const auto r = group_metrics(p2, shuffled);
    CHECK(r.wga == base.wga);
    CHECK(r.mga == base.mga);
}

TEST_CASE("report emission") {
    ReportRow a{"Original", make_report(groups_with({{9, 10}, {8, 10}, {5, 10}, {7, 10}})), true,
                background_metrics(0.9126, 0.7827)};
    ReportRow b{"ERM", make_report(groups_with({{1, 2}, {1, 2}})), false, {}};
    const std::string md = report_markdown({a, b});
    CHECK(md.find("| Method | WGA | MGA | MR | BG-Gap |") != std::string::npos);
    CHECK(md.find("| Original | 50.00 | 72.50 | 78.27 | 12.99 |") != std::string::npos);
    const auto j = nlohmann::json::parse(report_json({a, b}));
    CHECK(j.size() == 2);
    const auto back = report_rows_from_json(report_json({a, b}));
    REQUIRE(back.size() == 2);
    CHECK(report_markdown(back) == md);
}
