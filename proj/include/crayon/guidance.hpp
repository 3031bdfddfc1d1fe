#pragma once

#include <set>
#include <string>
#include <vector>

#include "crayon/autograd.hpp"

namespace crayon {

struct LossWeights {
    double alpha = 0.0;  // weight of the relevant-map term
    double beta = 0.0;   // weight of the irrelevant-map term
    void validate() const;
};

// Image ids judged relevant (R), irrelevant (I) or excluded.
struct RelevanceSets {
    std::set<std::string> relevant;
    std::set<std::string> irrelevant;
    std::set<std::string> excluded;

    // Throws unless the three sets are pairwise disjoint.
    void validate() const;
    std::size_t universe_size() const { return relevant.size() + irrelevant.size() + excluded.size(); }

    std::string to_json() const;
    static RelevanceSets from_json(const std::string& text);
};

// sum_hw M'(1 - M). Same shapes; M is a constant.
double loss_rel(const Tensor& trainable, const Tensor& reference);
// sum_hw M' M.
double loss_irrel(const Tensor& trainable, const Tensor& reference);

// -sum_k y_k log p_k. Probabilities must be positive and sum to 1 within 1e-6.
double loss_pred(const std::vector<double>& probs, const std::vector<double>& one_hot);

// Per-sample cross-entropy from logits via log-softmax: [N,K] -> [N].
ag::Var prediction_loss(const ag::Var& logits, const std::vector<int>& labels);

enum class Relevance { none, relevant, irrelevant };

struct AttentionLoss {
    ag::Var total;
    double pred = 0.0;   // sum of prediction losses in the batch
    double rel = 0.0;    // unweighted sum of L_rel over relevant items
    double irrel = 0.0;  // unweighted sum of L_irrel over irrelevant items
};

// Mini-batch attention loss:
//   sum L_pred + alpha/|R| sum_{R} L_rel + beta/|I| sum_{I} L_irrel
// with |R|, |I| the global set sizes. A term with an empty global set is
// dropped. `maps` [N,h,w] may be undefined when no item in the batch is
// guided; `reference` holds the constant maps for the same items.
AttentionLoss loss_att(const ag::Var& logits, const std::vector<int>& labels, const ag::Var& maps,
                       const Tensor& reference, const std::vector<Relevance>& roles, std::size_t global_relevant,
                       std::size_t global_irrelevant, const LossWeights& weights);

}  // namespace crayon
