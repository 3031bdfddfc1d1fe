#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "crayon/data.hpp"
#include "crayon/model.hpp"

namespace crayon {

// Which class score Grad-CAM differentiates. log_prob (log-softmax of the
// target) also counts evidence against the other classes; logit is the raw
// pre-softmax output.
enum class ScoreKind { log_prob, logit };

ScoreKind parse_score_kind(const std::string& s);
std::string to_string(ScoreKind k);

struct SaliencyMap {
    std::string image_id;
    std::string source_model_id;
    int target_class = 0;
    Tensor values;  // [H, W]

    int height() const { return values.dim(0); }
    int width() const { return values.dim(1); }
};

// Batched Grad-CAM from features A [N,C,h,w] and logits computed from them.
// Channel weight = spatial mean of d(score)/dA, map = ReLU(sum_c w_c A_c),
// then each map is divided by its maximum (all-zero maps stay zero).
// With create_graph the result stays differentiable w.r.t. whatever produced A.
ag::Var gradcam(const ag::Var& features, const ag::Var& logits, const std::vector<int>& targets, ScoreKind kind,
                bool create_graph);

// Constant maps [N,h,w]; gradients are cut at the feature layer.
Tensor reference_maps(const ConvNet& model, const Tensor& images, const std::vector<int>& targets,
                      ScoreKind kind = ScoreKind::log_prob, int batch = 64);

SaliencyMap compute_reference_map(const ConvNet& model, const Tensor& image, int target_class,
                                  ScoreKind kind = ScoreKind::log_prob);

// One map per example, target = ground-truth label.
std::vector<SaliencyMap> compute_reference_maps(const ConvNet& model, const Dataset& data,
                                                ScoreKind kind = ScoreKind::log_prob, int batch = 64);

struct TrainableMaps {
    ag::Var maps;    // [N,h,w], differentiable w.r.t. model parameters
    ag::Var logits;  // [N,K], shares the forward pass
};

// Requires grad mode to be on.
TrainableMaps compute_trainable_maps(const ConvNet& model, const ag::Var& images, const std::vector<int>& targets,
                                     ScoreKind kind = ScoreKind::log_prob);

// Single-image convenience wrapper returning an [h,w] Var.
ag::Var compute_trainable_map(const ConvNet& model, const Tensor& image, int target_class,
                              ScoreKind kind = ScoreKind::log_prob);

// Throws if a map has a negative entry or a nonzero map's max is not 1.
void check_saliency_map(const Tensor& values);

// Bilinear, half-pixel centres (edge-clamped).
Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w);

// Bilinear resample then re-normalize by the max.
Tensor resample_map(const Tensor& map, int out_h, int out_w);

enum class OverlayStyle { original, overlay, red };
OverlayStyle parse_overlay_style(const std::string& s);

struct RenderOptions {
    double red_threshold = 0.5;
    double overlay_opacity = 0.7;  // opacity at map value 1
    double red_mix = 0.6;
};

// image [3,H,W] in [0,1]; map [h,w] is upsampled to H x W.
Tensor render_overlay(const Tensor& image, const Tensor& map, OverlayStyle style, const RenderOptions& options = {});

struct Region {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel rectangle
    bool operator==(const Region&) const = default;
};

// Red rectangle outline of the given thickness.
Tensor render_patch(const Tensor& image, const Region& region, int thickness = 1);

// manifest.jsonl (image_id, class, source_model_id, offset, height, width)
// plus maps.f32 holding packed float32 maps.
void save_saliency_store(const std::vector<SaliencyMap>& maps, const std::filesystem::path& dir);
std::vector<SaliencyMap> load_saliency_store(const std::filesystem::path& dir);

using MapIndex = std::unordered_map<std::string, const SaliencyMap*>;
MapIndex index_maps(const std::vector<SaliencyMap>& maps);

}  // namespace crayon
