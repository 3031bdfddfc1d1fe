#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "crayon/annotations.hpp"
#include "crayon/data.hpp"
#include "crayon/model.hpp"
#include "crayon/saliency.hpp"
#include "crayon/train.hpp"

namespace crayon {

// One of the top images for a feature-layer channel. Patches found by several
// neurons share a patch_id after deduplication.
struct ConceptPatch {
    std::string patch_id;
    int neuron_id = 0;
    std::string image_id;
    Region region;
    int rank = 1;  // 1 = highest activation
    double activation = 0.0;
};

struct PatchOptions {
    int per_neuron = 3;
    double region_fraction = 0.25;  // side of the square region relative to the image side
    int batch = 128;
};

// Per neuron, the images with the highest spatial-max activation (ties by
// ascending image_id). Output is ordered by neuron, then rank.
std::vector<ConceptPatch> extract_patches(const ConvNet& model, const Dataset& data, const PatchOptions& options = {});

// Distinct (image_id, region) pairs, in order of first appearance.
struct UniquePatch {
    std::string patch_id;
    std::string image_id;
    Region region;
    std::vector<int> neurons;
};
std::vector<UniquePatch> unique_patches(const std::vector<ConceptPatch>& patches);

void save_patch_manifest(const std::vector<ConceptPatch>& patches, const std::filesystem::path& path);
std::vector<ConceptPatch> load_patch_manifest(const std::filesystem::path& path);

enum class Verdict { relevant, irrelevant, undetermined };
std::string to_string(Verdict v);
Verdict parse_verdict(const std::string& s);

struct NeuronRelevance {
    int neuron_id = 0;
    Verdict verdict = Verdict::undetermined;
    int yes = 0;
    int no = 0;
    int unanswered = 0;
};

// Majority vote over each neuron's patches (yes > no -> relevant, no > yes ->
// irrelevant, otherwise undetermined). Throws on answers for unknown patches.
std::vector<NeuronRelevance> decide_relevance(const std::vector<ConceptPatch>& patches,
                                              const std::map<std::string, Answer>& answers);

// Patch records -> patch_id -> answer. Several answers on one patch resolve by
// majority, a tie leaves the patch unanswered.
std::map<std::string, Answer> patch_answers(const std::vector<AnnotationRecord>& records);

std::vector<int> irrelevant_neurons(const std::vector<NeuronRelevance>& relevance);

std::string neuron_relevance_to_json(const std::vector<NeuronRelevance>& relevance);
std::vector<NeuronRelevance> neuron_relevance_from_json(const std::string& text);

// Oracle answers for every unique patch of a masked dataset.
std::vector<AnnotationRecord> oracle_annotate_patches(const std::vector<ConceptPatch>& patches, const Dataset& data,
                                                      double tau, const std::string& annotator_id = "oracle");

// Masks the channels, then trains only the final layer with the prediction
// loss. Every other parameter is left untouched.
ConvNet prune_and_finetune(const ConvNet& model, const std::vector<int>& neurons, const Dataset& data,
                           const TrainConfig& config, std::vector<EpochStats>* history = nullptr);

// Applies the channel mask only.
void apply_pruning(ConvNet& model, const std::vector<int>& neurons);

}  // namespace crayon
