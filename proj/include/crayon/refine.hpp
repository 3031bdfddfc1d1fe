#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crayon/concepts.hpp"
#include "crayon/guidance.hpp"
#include "crayon/metrics.hpp"
#include "crayon/train.hpp"

namespace crayon {

enum class RefineMode { attention, pruning, all, erm };
RefineMode parse_refine_mode(const std::string& s);
std::string to_string(RefineMode m);

struct RefinementConfig {
    RefineMode mode = RefineMode::attention;
    // Tuned once on the synthetic set (rho 0.95, convnet-a) and frozen.
    LossWeights weights{100.0, 10.0};
    OptimizerConfig optimizer{.learning_rate = 3e-4};
    int epochs = 20;
    int batch_size = 64;
    std::optional<long> annotation_subsample_n;
    std::uint64_t seed = 0;
    std::string reference_model_id;
    ScoreKind score = ScoreKind::log_prob;
    // Final-layer fine-tuning after pruning.
    OptimizerConfig prune_optimizer;
    int prune_epochs = 10;

    TrainConfig train_config() const;
    TrainConfig prune_config() const;
    std::string to_json() const;
    static RefinementConfig from_json(const std::string& text);
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& c);

struct RefineResult {
    ConvNet model;
    std::vector<EpochStats> history;
    RelevanceSets sets;  // relevance sets actually used (after subsampling)
    std::vector<int> pruned;
};

// ERM from a fresh initialisation; produces the "Original" model.
ConvNet train_original(const Dataset& data, const ArchSpec& arch, std::uint64_t model_seed, const TrainConfig& config,
                       std::vector<EpochStats>* history = nullptr);

// Plain prediction-loss fine-tuning of every parameter.
RefineResult refine_erm(const ConvNet& model, const Dataset& data, const RefinementConfig& config);

RefineResult refine_attention(const ConvNet& model, const Dataset& data, const std::vector<SaliencyMap>& reference_maps,
                              const RelevanceSets& sets, const RefinementConfig& config);

RefineResult refine_pruning(const ConvNet& model, const Dataset& data, const std::vector<NeuronRelevance>& relevance,
                            const RefinementConfig& config);

// Pruning mask first, then attention fine-tuning of the whole model with the
// mask held fixed.
RefineResult refine_all(const ConvNet& model, const Dataset& data, const std::vector<SaliencyMap>& reference_maps,
                        const RelevanceSets& sets, const std::vector<NeuronRelevance>& relevance,
                        const RefinementConfig& config);

// Source maps are resampled to the target's feature resolution when needed.
RefineResult refine_transfer(const ConvNet& target, const Dataset& data, const std::vector<SaliencyMap>& source_maps,
                             const RelevanceSets& sets, const RefinementConfig& config);

std::vector<SaliencyMap> resample_maps(const std::vector<SaliencyMap>& maps, int h, int w);

struct SweepRow {
    std::string param;
    double value = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    GroupAccuracyReport report;
};

// Attention refinement for each value of alpha or beta, the other weight
// held at its configured value.
std::vector<SweepRow> sweep(const ConvNet& model, const Dataset& train, const Dataset& test,
                            const std::vector<SaliencyMap>& reference_maps, const RelevanceSets& sets,
                            const RefinementConfig& base, const std::string& param, const std::vector<double>& values);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace crayon
