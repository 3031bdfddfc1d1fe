#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crayon/data.hpp"
#include "crayon/guidance.hpp"
#include "crayon/model.hpp"
#include "crayon/optim.hpp"
#include "crayon/saliency.hpp"

namespace crayon {

struct TrainConfig {
    OptimizerConfig optimizer;
    int epochs = 10;
    int batch_size = 64;
    std::uint64_t seed = 0;  // drives the per-epoch shuffles
};

struct EpochStats {
    int epoch = 0;
    double pred = 0.0;   // sum over the epoch
    double rel = 0.0;    // unweighted L_rel sum over relevant items
    double irrel = 0.0;  // unweighted L_irrel sum over irrelevant items
    double total = 0.0;  // sum of the optimized batch losses
    int guided_batches = 0;
    double seconds = 0.0;

    std::string to_json() const;
};

// Attention guidance for the examples of one dataset, indexed like
// Dataset::examples.
struct Guidance {
    std::vector<Relevance> roles;
    Tensor reference;  // [N,h,w]; rows of unguided items are ignored
    std::size_t relevant = 0;
    std::size_t irrelevant = 0;
    LossWeights weights;
    ScoreKind score = ScoreKind::log_prob;
};

// Builds the per-example roles/reference tensor. Every id in R or I must be
// part of `data` and have a map of the model's feature resolution.
Guidance make_guidance(const Dataset& data, const std::vector<SaliencyMap>& maps, const RelevanceSets& sets,
                       const LossWeights& weights, ScoreKind score, std::pair<int, int> feature_size);

// Mini-batch training of `params` (a subset of the model's parameters).
// Batches containing no guided item, or alpha = beta = 0, skip the Grad-CAM
// branch and optimise the plain prediction loss.
std::vector<EpochStats> train_model(ConvNet& model, const Dataset& data, const TrainConfig& config,
                                    const std::vector<ag::Var>& params, const Guidance* guidance = nullptr);

// Trains only the final layer on features computed once from the frozen body.
std::vector<EpochStats> train_head(ConvNet& model, const Dataset& data, const TrainConfig& config);

void write_history(const std::vector<EpochStats>& history, const std::filesystem::path& path);

}  // namespace crayon
