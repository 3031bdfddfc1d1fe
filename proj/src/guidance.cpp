#include "crayon/guidance.hpp"

#include <cmath>
#include <stdexcept>

#include "crayon/ops.hpp"
#include "json.hpp"

namespace crayon {

using nlohmann::json;

void LossWeights::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
}

void RelevanceSets::validate() const {
    for (const auto& id : relevant) {
        if (irrelevant.count(id) || excluded.count(id)) {
            throw std::invalid_argument("relevance sets overlap at " + id);
        }
    }
    for (const auto& id : irrelevant) {
        if (excluded.count(id)) throw std::invalid_argument("relevance sets overlap at " + id);
    }
}

std::string RelevanceSets::to_json() const {
    json j = {{"relevant", relevant}, {"irrelevant", irrelevant}, {"excluded", excluded}};
    return j.dump(2);
}

RelevanceSets RelevanceSets::from_json(const std::string& text) {
    const json j = json::parse(text);
    RelevanceSets r;
    r.relevant = j.value("relevant", std::set<std::string>{});
    r.irrelevant = j.value("irrelevant", std::set<std::string>{});
    r.excluded = j.value("excluded", std::set<std::string>{});
    r.validate();
    return r;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims() != b.dims()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + dims_to_string(a.dims()) + " vs " +
                                    dims_to_string(b.dims()));
    }
}
}  // namespace

double loss_rel(const Tensor& trainable, const Tensor& reference) {
    require_same_shape(trainable, reference, "loss_rel");
    double acc = 0.0;
    for (std::size_t i = 0; i < trainable.size(); ++i) acc += trainable[i] * (1.0 - reference[i]);
    return acc;
}

double loss_irrel(const Tensor& trainable, const Tensor& reference) {
    require_same_shape(trainable, reference, "loss_irrel");
    double acc = 0.0;
    for (std::size_t i = 0; i < trainable.size(); ++i) acc += trainable[i] * reference[i];
    return acc;
}

double loss_pred(const std::vector<double>& probs, const std::vector<double>& one_hot) {
    if (probs.size() != one_hot.size() || probs.empty()) throw std::invalid_argument("loss_pred: class count mismatch");
    double total = 0.0;
    for (double p : probs) {
        if (!(p > 0.0)) throw std::invalid_argument("loss_pred: probabilities must be positive");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("loss_pred: probabilities do not sum to 1");
    double loss = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (one_hot[k] != 0.0) loss -= one_hot[k] * std::log(probs[k]);
    }
    return loss;
}

ag::Var prediction_loss(const ag::Var& logits, const std::vector<int>& labels) {
    const int k = logits.dims().at(1);
    for (int y : labels) {
        if (y < 0 || y >= k) throw std::invalid_argument("prediction_loss: label out of range");
    }
    return ag::neg(ag::gather_cols(ag::log_softmax(logits), labels));
}

AttentionLoss loss_att(const ag::Var& logits, const std::vector<int>& labels, const ag::Var& maps,
                       const Tensor& reference, const std::vector<Relevance>& roles, std::size_t global_relevant,
                       std::size_t global_irrelevant, const LossWeights& weights) {
    weights.validate();
    const int n = logits.dims().at(0);
    if (static_cast<int>(labels.size()) != n || static_cast<int>(roles.size()) != n) {
        throw std::invalid_argument("loss_att: batch size mismatch");
    }
    AttentionLoss out;
    out.total = ag::sum_all(prediction_loss(logits, labels));
    out.pred = out.total.value()[0];

    bool any_rel = false, any_irrel = false;
    for (auto r : roles) {
        any_rel |= r == Relevance::relevant;
        any_irrel |= r == Relevance::irrelevant;
    }
    const bool use_rel = any_rel && weights.alpha > 0.0 && global_relevant > 0;
    const bool use_irrel = any_irrel && weights.beta > 0.0 && global_irrelevant > 0;
    if (!any_rel && !any_irrel) return out;
    if (!maps) {
        if (use_rel || use_irrel) throw std::invalid_argument("loss_att: guided items need trainable maps");
        return out;
    }
    if (maps.dims() != reference.dims() || maps.dims().at(0) != n) {
        throw std::invalid_argument("loss_att: map shape mismatch " + dims_to_string(maps.dims()) + " vs " +
                                    dims_to_string(reference.dims()));
    }

    const std::size_t per = reference.sample_size();
    Tensor w_rel(reference.dims(), 0.0), w_irrel(reference.dims(), 0.0);
    for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * per;
        for (std::size_t p = 0; p < per; ++p) {
            if (roles[static_cast<std::size_t>(i)] == Relevance::relevant) w_rel[off + p] = 1.0 - reference[off + p];
            if (roles[static_cast<std::size_t>(i)] == Relevance::irrelevant) w_irrel[off + p] = reference[off + p];
        }
    }
    if (any_rel) {
        const ag::Var rel = ag::sum_all(ag::mul_const(maps, w_rel));
        out.rel = rel.value()[0];
        if (use_rel) out.total = ag::add(out.total, ag::scale(rel, weights.alpha / static_cast<double>(global_relevant)));
    }
    if (any_irrel) {
        const ag::Var irrel = ag::sum_all(ag::mul_const(maps, w_irrel));
        out.irrel = irrel.value()[0];
        if (use_irrel) {
            out.total = ag::add(out.total, ag::scale(irrel, weights.beta / static_cast<double>(global_irrelevant)));
        }
    }
    return out;
}

}  // namespace crayon
