#include "crayon/train.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "crayon/ops.hpp"
#include "json.hpp"

namespace crayon {

using nlohmann::json;

std::string EpochStats::to_json() const {
    json j = {{"epoch", epoch}, {"pred", pred},   {"rel", rel},       {"irrel", irrel},
              {"total", total}, {"guided_batches", guided_batches}, {"seconds", seconds}};
    return j.dump();
}

Guidance make_guidance(const Dataset& data, const std::vector<SaliencyMap>& maps, const RelevanceSets& sets,
                       const LossWeights& weights, ScoreKind score, std::pair<int, int> feature_size) {
    sets.validate();
    weights.validate();
    const auto [h, w] = feature_size;
    Guidance g;
    g.weights = weights;
    g.score = score;
    g.roles.assign(data.size(), Relevance::none);
    g.reference = Tensor({static_cast<int>(data.size()), h, w}, 0.0);
    const MapIndex index = index_maps(maps);
    const std::size_t per = static_cast<std::size_t>(h) * w;
    std::size_t seen_r = 0, seen_i = 0;
    for (std::size_t n = 0; n < data.size(); ++n) {
        const std::string& id = data.examples[n].image_id;
        Relevance role = Relevance::none;
        if (sets.relevant.count(id)) role = Relevance::relevant;
        if (sets.irrelevant.count(id)) role = Relevance::irrelevant;
        if (role == Relevance::none) continue;
        const auto it = index.find(id);
        if (it == index.end()) throw std::invalid_argument("missing reference map for " + id);
        const Tensor& m = it->second->values;
        if (m.dims() != Dims{h, w}) {
            throw std::invalid_argument("reference map for " + id + " has shape " + dims_to_string(m.dims()) +
                                        ", model features are " + std::to_string(h) + "x" + std::to_string(w));
        }
        std::copy(m.data(), m.data() + per, g.reference.data() + n * per);
        g.roles[n] = role;
        (role == Relevance::relevant ? seen_r : seen_i) += 1;
    }
    if (seen_r != sets.relevant.size() || seen_i != sets.irrelevant.size()) {
        throw std::invalid_argument("relevance sets name images that are not in the training set");
    }
    g.relevant = seen_r;
    g.irrelevant = seen_i;
    return g;
}

namespace {

bool batch_is_guided(const Guidance* g, const std::vector<int>& idx) {
    if (!g) return false;
    const bool use_rel = g->weights.alpha > 0.0 && g->relevant > 0;
    const bool use_irrel = g->weights.beta > 0.0 && g->irrelevant > 0;
    for (int i : idx) {
        const Relevance r = g->roles[static_cast<std::size_t>(i)];
        if ((r == Relevance::relevant && use_rel) || (r == Relevance::irrelevant && use_irrel)) return true;
    }
    return false;
}

Tensor gather_rows(const Tensor& t, const std::vector<int>& idx) {
    Dims d = t.dims();
    d[0] = static_cast<int>(idx.size());
    Tensor out(d);
    const std::size_t per = t.sample_size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(t.data() + idx[i] * per, t.data() + (idx[i] + 1) * per, out.data() + i * per);
    }
    return out;
}

}  // namespace

std::vector<EpochStats> train_model(ConvNet& model, const Dataset& data, const TrainConfig& config,
                                    const std::vector<ag::Var>& params, const Guidance* guidance) {
    if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (config.batch_size < 1) throw std::invalid_argument("batch size must be positive");
    if (guidance && guidance->roles.size() != data.size()) throw std::invalid_argument("guidance/dataset mismatch");
    if (config.epochs > 0 && data.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");

    Optimizer opt(params, config.optimizer);
    std::mt19937_64 rng(config.seed);
    std::vector<int> order(data.size());
    std::vector<EpochStats> history;
    ag::GradModeGuard recording(true);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats stats;
        stats.epoch = epoch + 1;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<int> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
            const ag::Var images = ag::Var::constant(data.images(idx));
            const std::vector<int> labels = data.labels(idx);

            AttentionLoss loss;
            if (batch_is_guided(guidance, idx)) {
                const TrainableMaps tm = compute_trainable_maps(model, images, labels, guidance->score);
                std::vector<Relevance> roles;
                for (int i : idx) roles.push_back(guidance->roles[static_cast<std::size_t>(i)]);
                loss = loss_att(tm.logits, labels, tm.maps, gather_rows(guidance->reference, idx), roles,
                                guidance->relevant, guidance->irrelevant, guidance->weights);
                ++stats.guided_batches;
            } else {
                const ag::Var logits = model.forward(images).logits;
                loss.total = ag::sum_all(prediction_loss(logits, labels));
                loss.pred = loss.total.value()[0];
            }
            stats.pred += loss.pred;
            stats.rel += loss.rel;
            stats.irrel += loss.irrel;
            stats.total += loss.total.value()[0];
            opt.step(ag::grad(loss.total, params));
        }
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.push_back(stats);
    }
    return history;
}

std::vector<EpochStats> train_head(ConvNet& model, const Dataset& data, const TrainConfig& config) {
    if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (config.batch_size < 1) throw std::invalid_argument("batch size must be positive");
    std::vector<EpochStats> history;
    if (config.epochs == 0) return history;
    const Tensor feats = model.feature_values(data.all_images());
    const std::vector<int> all_labels = data.labels();
    const auto params = model.head_parameters();
    Optimizer opt(params, config.optimizer);
    std::mt19937_64 rng(config.seed);
    std::vector<int> order(data.size());
    ag::GradModeGuard recording(true);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats stats;
        stats.epoch = epoch + 1;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<int> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
            std::vector<int> labels;
            for (int i : idx) labels.push_back(all_labels[static_cast<std::size_t>(i)]);
            const ag::Var logits = model.head(ag::Var::constant(gather_rows(feats, idx)));
            const ag::Var loss = ag::sum_all(prediction_loss(logits, labels));
            stats.pred += loss.value()[0];
            stats.total += loss.value()[0];
            opt.step(ag::grad(loss, params));
        }
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.push_back(stats);
    }
    return history;
}

void write_history(const std::vector<EpochStats>& history, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write history " + path.string());
    for (const auto& h : history) out << h.to_json() << '\n';
}

}  // namespace crayon
