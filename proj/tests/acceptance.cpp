// End-to-end acceptance checks. One PASS/FAIL line per criterion.
// Usage: crayon_acceptance [criterion ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "crayon/refine.hpp"
#include "gradcheck.hpp"

using namespace crayon;
using testutil::random_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 ---------------------------------------------------------------------------

Outcome loss_oracles() {
    const Tensor m({2, 2}, {1.0, 0.5, 0.0, 0.0});
    std::vector<std::pair<double, double>> got_want = {
        {loss_rel(m, m), 0.25},
        {loss_rel(Tensor({2, 2}, 0.4), Tensor({2, 2}, 1.0)), 0.0},
        {loss_irrel(Tensor({2, 2}, 1.0), m), 1.5},
        {loss_irrel(Tensor({2, 2}, 0.0), m), 0.0},
        {loss_pred({0.5, 0.5}, {0.0, 1.0}), 0.693147},
        {loss_pred(std::vector<double>(9, 1.0 / 9), {0, 0, 0, 0, 1, 0, 0, 0, 0}), 2.197225},
    };
    double worst = 0.0;
    for (const auto& [g, w] : got_want) worst = std::max(worst, std::abs(g - w));
    return {worst <= 1e-6, fmt("%zu examples, max |error| %.2e", got_want.size(), worst)};
}

// ---- 2 ---------------------------------------------------------------------------

Outcome erm_reduction() {
    SynthSpec s;
    s.per_class = 60;
    s.seed = 21;
    s.image_size = 16;
    const Dataset d = generate_synthetic(s);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 16;
    const ConvNet base = train_original(d, ArchSpec::preset("tiny", 2, 16), 4, tc);
    const auto maps = compute_reference_maps(base, d);
    RelevanceSets sets;
    for (std::size_t i = 0; i < d.size(); ++i) (i % 2 ? sets.relevant : sets.irrelevant).insert(d.examples[i].image_id);
    RefinementConfig c;
    c.weights = {0.0, 0.0};
    c.epochs = 3;
    c.batch_size = 16;
    c.seed = 5;
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t att = hash_parameters(refine_attention(base, d, maps, sets, c).model.parameters());
    const std::uint64_t erm = hash_parameters(refine_erm(base, d, c).model.parameters());
    const bool moved = att != hash_parameters(base.parameters());
    return {att == erm && moved, fmt("parameter hashes %016llx vs %016llx, %.1fs", static_cast<unsigned long long>(att),
                                     static_cast<unsigned long long>(erm), seconds_since(t0))};
}

// ---- 3 ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
    const ConvNet net(ArchSpec::preset("tiny", 2, 12), 17);
    std::mt19937_64 rng(18);
    const Tensor images = random_tensor({6, 3, 12, 12}, rng, 0.0, 1.0);
    const std::vector<int> labels = {0, 1, 0, 1, 1, 0};
    const std::vector<Relevance> roles = {Relevance::relevant,   Relevance::irrelevant, Relevance::none,
                                          Relevance::relevant,   Relevance::irrelevant, Relevance::relevant};
    const Tensor reference = reference_maps(ConvNet(ArchSpec::preset("tiny", 2, 12), 99), images, labels);
    ag::GradModeGuard on(true);
    auto loss = [&] {
        const auto tm = compute_trainable_maps(net, ag::Var::constant(images), labels);
        return loss_att(tm.logits, labels, tm.maps, reference, roles, 3, 2, {5.0, 3.0}).total;
    };
    const auto r = testutil::check_gradients(loss, net.parameters(), 1e-5, 1e-3, 1e-7);
    const double frac = static_cast<double>(r.within) / static_cast<double>(r.checked);
    return {net.parameter_count() <= 1000 && frac >= 0.95,
            fmt("%zu parameters, %.1f%% within 1e-3 (max rel %.2e)", r.checked, 100.0 * frac, r.max_rel)};
}

// ---- 4 ---------------------------------------------------------------------------

Outcome saliency_invariants() {
    std::mt19937_64 rng(4);
    const char* presets[] = {"convnet-a", "convnet-b", "tiny"};
    int pairs = 0, bad = 0, zero = 0;
    for (int m = 0; m < 200; ++m) {
        const int classes = 2 + static_cast<int>(rng() % 4);
        const ConvNet net(ArchSpec::preset(presets[m % 3], classes, 32), rng());
        const Tensor images = random_tensor({5, 3, 32, 32}, rng, 0.0, 1.0);
        std::vector<int> targets;
        for (int i = 0; i < 5; ++i) targets.push_back(static_cast<int>(rng() % classes));
        const Tensor maps = reference_maps(net, images, targets);
        const std::size_t plane = maps.sample_size();
        for (int i = 0; i < 5; ++i, ++pairs) {
            Tensor one({maps.dim(1), maps.dim(2)}, std::vector<double>(maps.data() + i * plane, maps.data() + (i + 1) * plane));
            try {
                check_saliency_map(one);
            } catch (const std::exception&) {
                ++bad;
            }
            const double mx = *std::max_element(one.values().begin(), one.values().end());
            if (mx == 0.0) ++zero;
            else if (mx != 1.0) ++bad;
        }
    }
    return {pairs == 1000 && bad == 0, fmt("%d pairs, %d violations, %d all-zero maps", pairs, bad, zero)};
}

// ---- 5 ---------------------------------------------------------------------------

Outcome pruning_soundness() {
    std::mt19937_64 rng(5);
    const ConvNet base(ArchSpec::preset("convnet-a", 3), 6);
    const int channels = base.arch().feature_channels();
    int mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        std::vector<int> prune;
        for (int c = 0; c < channels; ++c)
            if (rng() % 2) prune.push_back(c);
        if (static_cast<int>(prune.size()) == channels) prune.pop_back();
        ConvNet masked = base.clone();
        apply_pruning(masked, prune);
        const Tensor x = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
        Tensor feats = base.feature_values(x);
        const std::size_t plane = static_cast<std::size_t>(feats.dim(2)) * feats.dim(3);
        for (int c : prune) std::fill_n(feats.data() + c * plane, plane, 0.0);
        ag::NoGradGuard ng;
        if (!(masked.logits(x) == base.head(ag::Var::constant(feats)).value())) ++mismatches;
    }
    SynthSpec s;
    s.per_class = 40;
    const Dataset d = generate_synthetic(s);
    TrainConfig tc;
    tc.epochs = 3;
    const ConvNet tuned = prune_and_finetune(base, {0, 3, 7}, d, tc);
    const bool frozen = tuned.body_hash() == base.body_hash();
    const bool head_moved = tuned.head_hash() != base.head_hash();
    return {mismatches == 0 && frozen && head_moved,
            fmt("100 masked forwards, %d mismatches; body hash %s, head %s", mismatches,
                frozen ? "unchanged" : "CHANGED", head_moved ? "updated" : "not updated")};
}

// ---- 6 ---------------------------------------------------------------------------

Outcome aggregation_tables() {
    const std::optional<Answer> states[] = {Answer::yes, Answer::no, std::nullopt};
    int pair_ok = 0, pair_total = 0;
    for (auto a : states) {
        for (auto b : states) {
            ++pair_total;
            const AggregatedLabel want = (a == Answer::yes && b == Answer::yes) ? AggregatedLabel::relevant
                                         : (a == Answer::no && b == Answer::no) ? AggregatedLabel::irrelevant
                                                                                : AggregatedLabel::excluded;
            std::vector<AnnotationRecord> rs;
            if (a) rs.push_back({"t", SubjectKind::saliency, "img", "A", *a, ""});
            if (b) rs.push_back({"t", SubjectKind::saliency, "img", "B", *b, ""});
            const auto sets = aggregate_saliency(rs);
            const bool via_records = rs.empty() ||
                                     (want == AggregatedLabel::relevant ? sets.relevant.count("img")
                                      : want == AggregatedLabel::irrelevant ? sets.irrelevant.count("img")
                                                                             : sets.excluded.count("img"));
            if (aggregate_pair(a, b) == want && via_records) ++pair_ok;
        }
    }
    std::vector<ConceptPatch> patches(3);
    for (int i = 0; i < 3; ++i) patches[i] = {"p" + std::to_string(i), 0, "img" + std::to_string(i), {}, i + 1, 0.0};
    int maj_ok = 0, maj_total = 0;
    for (auto x : states)
        for (auto y : states)
            for (auto z : states) {
                ++maj_total;
                std::map<std::string, Answer> answers;
                int yes = 0, no = 0;
                const std::optional<Answer> trio[] = {x, y, z};
                for (int i = 0; i < 3; ++i) {
                    if (!trio[i]) continue;
                    answers["p" + std::to_string(i)] = *trio[i];
                    (*trio[i] == Answer::yes ? yes : no) += 1;
                }
                const Verdict want = yes > no ? Verdict::relevant : no > yes ? Verdict::irrelevant : Verdict::undetermined;
                if (decide_relevance(patches, answers).at(0).verdict == want) ++maj_ok;
            }
    return {pair_ok == 9 && pair_total == 9 && maj_ok == 27 && maj_total == 27,
            fmt("pair table %d/%d, neuron majority %d/%d", pair_ok, pair_total, maj_ok, maj_total)};
}

// ---- 7, 8, 9, 11 -----------------------------------------------------------------

// One seed of the synthetic protocol: biased training set (rho 0.95), balanced
// test set, oracle annotations, every refinement variant.
struct SeedRun {
    double original = 0, erm = 0, attention = 0, pruning = 0, all = 0;
    double no_rel = 0, no_irrel = 0, sub10 = 0;
    double second_original = 0, transfer = 0;
    std::size_t relevant = 0, irrelevant = 0, pruned = 0;
};

constexpr int kSeeds = 5;
constexpr int kOriginalEpochs = 20;
constexpr int kTestPerGroup = 250;
constexpr double kTau = 0.6;
constexpr double kPatchTau = 0.5;

SeedRun run_seed(int seed) {
    SynthSpec s;
    s.seed = static_cast<std::uint64_t>(seed);
    s.id_prefix = "train";
    const Dataset train = generate_synthetic(s);
    SynthSpec ts = SynthSpec::balanced(2, kTestPerGroup, 1000 + seed);
    ts.id_prefix = "test";
    const Dataset test = generate_synthetic(ts);
    auto wga = [&](const ConvNet& m) { return group_metrics(m, test).wga; };

    TrainConfig tc;
    tc.epochs = kOriginalEpochs;
    tc.seed = static_cast<std::uint64_t>(seed);
    const ConvNet original = train_original(train, ArchSpec::preset("convnet-a", 2), seed, tc);
    const auto maps = compute_reference_maps(original, train);
    const auto sets = aggregate_saliency(oracle_annotate_saliency(maps, train, kTau), 1);
    const auto patches = extract_patches(original, train);
    const auto neurons = decide_relevance(patches, patch_answers(oracle_annotate_patches(patches, train, kPatchTau)));

    RefinementConfig c;
    c.seed = static_cast<std::uint64_t>(seed) + 7;
    SeedRun r;
    r.relevant = sets.relevant.size();
    r.irrelevant = sets.irrelevant.size();
    r.pruned = irrelevant_neurons(neurons).size();
    r.original = wga(original);
    r.erm = wga(refine_erm(original, train, c).model);
    r.attention = wga(refine_attention(original, train, maps, sets, c).model);
    r.pruning = wga(refine_pruning(original, train, neurons, c).model);
    r.all = wga(refine_all(original, train, maps, sets, neurons, c).model);
    RefinementConfig no_rel = c;
    no_rel.weights.alpha = 0.0;
    r.no_rel = wga(refine_attention(original, train, maps, sets, no_rel).model);
    RefinementConfig no_irrel = c;
    no_irrel.weights.beta = 0.0;
    r.no_irrel = wga(refine_attention(original, train, maps, sets, no_irrel).model);
    RefinementConfig sub = c;
    sub.annotation_subsample_n = static_cast<long>(sets.universe_size() / 10);
    r.sub10 = wga(refine_attention(original, train, maps, sets, sub).model);

    const ConvNet second = train_original(train, ArchSpec::preset("convnet-b", 2), seed + 100, tc);
    r.second_original = wga(second);
    r.transfer = wga(refine_transfer(second, train, maps, sets, c).model);
    return r;
}

const std::vector<SeedRun>& protocol_runs() {
    static const std::vector<SeedRun> runs = [] {
        std::vector<SeedRun> out;
        for (int seed = 0; seed < kSeeds; ++seed) {
            const auto t0 = std::chrono::steady_clock::now();
            out.push_back(run_seed(seed));
            const SeedRun& r = out.back();
            std::printf("  seed %d (|R| %zu, |I| %zu, pruned %zu, %.0fs): original %.3f erm %.3f attention %.3f "
                        "pruning %.3f all %.3f no-rel %.3f no-irrel %.3f 10%% %.3f | second %.3f transfer %.3f\n",
                        seed, r.relevant, r.irrelevant, r.pruned, seconds_since(t0), r.original, r.erm, r.attention,
                        r.pruning, r.all, r.no_rel, r.no_irrel, r.sub10, r.second_original, r.transfer);
            std::fflush(stdout);
        }
        return out;
    }();
    return runs;
}

double mean_of(double SeedRun::*field) {
    const auto& runs = protocol_runs();
    double s = 0.0;
    for (const auto& r : runs) s += r.*field;
    return s / static_cast<double>(runs.size());
}

Outcome directional_efficacy() {
    const double orig = mean_of(&SeedRun::original), att = mean_of(&SeedRun::attention);
    const double pr = mean_of(&SeedRun::pruning), all = mean_of(&SeedRun::all);
    const bool gain = att - orig >= 0.10;
    const bool order = all >= std::max(att, pr) - 0.01;
    return {gain && order, fmt("mean WGA original %.4f, attention %.4f (+%.1fpp), pruning %.4f, all %.4f", orig, att,
                               100.0 * (att - orig), pr, all)};
}

Outcome ablation_direction() {
    const double no_rel = mean_of(&SeedRun::no_rel), no_irrel = mean_of(&SeedRun::no_irrel);
    return {no_rel < no_irrel, fmt("mean WGA without L_rel %.4f, without L_irrel %.4f", no_rel, no_irrel)};
}

Outcome annotation_curve() {
    const double erm = mean_of(&SeedRun::erm), sub = mean_of(&SeedRun::sub10), full = mean_of(&SeedRun::attention);
    const bool above = sub >= erm + 0.05;
    const bool near = std::abs(sub - full) <= 0.05;
    return {above && near, fmt("mean WGA 0%% (ERM) %.4f, 10%% %.4f, 100%% %.4f", erm, sub, full)};
}

Outcome transfer_gain() {
    const double before = mean_of(&SeedRun::second_original), after = mean_of(&SeedRun::transfer);
    return {after - before > 0.0, fmt("second architecture mean WGA %.4f -> %.4f (%+.1fpp)", before, after,
                                      100.0 * (after - before))};
}

// ---- 10 --------------------------------------------------------------------------

Outcome runtime_linearity() {
    SynthSpec s;
    s.seed = 31;
    const Dataset full = generate_synthetic(s);
    TrainConfig tc;
    tc.epochs = 2;
    const ConvNet model = train_original(full, ArchSpec::preset("convnet-a", 2), 1, tc);
    const auto maps = compute_reference_maps(model, full);
    const auto sets = aggregate_saliency(oracle_annotate_saliency(maps, full, kTau), 1);
    // Every other image: same group mix at half the size.
    Dataset half = full;
    half.examples.clear();
    for (std::size_t i = 0; i < full.size(); i += 2) half.examples.push_back(full.examples[i]);
    RelevanceSets half_sets;
    for (const auto& e : half.examples) {
        const std::string& id = e.image_id;
        (sets.relevant.count(id) ? half_sets.relevant : sets.irrelevant.count(id) ? half_sets.irrelevant
                                                                                  : half_sets.excluded)
            .insert(id);
    }
    RefinementConfig c;
    c.epochs = 2;
    auto time_of = [&](const Dataset& d, const RelevanceSets& rs) {
        double best = 1e300;
        for (int rep = 0; rep < 2; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            refine_attention(model, d, maps, rs, c);
            best = std::min(best, seconds_since(t0));
        }
        return best;
    };
    const double t500 = time_of(half, half_sets), t1000 = time_of(full, sets);
    const double ratio = t1000 / t500;
    return {ratio >= 1.6 && ratio <= 2.6, fmt("N=%zu %.2fs, N=%zu %.2fs, ratio %.3f", half.size(), t500, full.size(),
                                              t1000, ratio)};
}

// ---- 12 --------------------------------------------------------------------------

Outcome metrics_examples() {
    std::map<GroupId, GroupStats> g = {{{0, 0}, {9, 10}}, {{0, 1}, {8, 10}}, {{1, 0}, {5, 10}}, {{1, 1}, {7, 10}}};
    const auto r = make_report(g);
    const bool hand = r.wga == 0.5 && std::abs(r.mga - 0.725) < 1e-12;
    const bool gap = std::abs(background_metrics(0.9126, 0.7827).bg_gap - 0.1299) < 1e-12 &&
                     background_metrics(0.8, 0.8).bg_gap == 0.0;
    std::mt19937_64 rng(12);
    int violations = 0;
    for (int t = 0; t < 1000; ++t) {
        std::map<GroupId, GroupStats> groups;
        const int n = 1 + static_cast<int>(rng() % 10);
        for (int i = 0; i < n; ++i) {
            const int total = 1 + static_cast<int>(rng() % 500);
            groups[{i, static_cast<int>(rng() % 3)}] = {static_cast<int>(rng() % (total + 1)), total};
        }
        const auto rep = make_report(groups);
        if (!(rep.wga <= rep.mga)) ++violations;
    }
    return {hand && gap && violations == 0,
            fmt("WGA %.4f MGA %.4f, BG-Gap example %s, %d/1000 reports violate WGA <= MGA", r.wga, r.mga,
                gap ? "exact" : "WRONG", violations)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"loss oracles", loss_oracles},
        {"ERM reduction", erm_reduction},
        {"gradient fidelity", gradient_fidelity},
        {"saliency invariants", saliency_invariants},
        {"pruning soundness", pruning_soundness},
        {"annotation aggregation", aggregation_tables},
        {"directional efficacy", directional_efficacy},
        {"ablation direction", ablation_direction},
        {"annotation-count curve", annotation_curve},
        {"runtime linearity", runtime_linearity},
        {"transfer", transfer_gain},
        {"metrics", metrics_examples},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %2d %-24s %s  %s [%.1fs]\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
