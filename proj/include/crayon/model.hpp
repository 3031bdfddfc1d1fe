#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crayon/autograd.hpp"
#include "crayon/ops.hpp"

namespace crayon {

struct ConvLayerSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
};

// Conv stack -> ReLU after every conv -> global average pool -> linear head.
// The output of the last conv block (after ReLU and channel mask) is the
// designated feature layer for Grad-CAM and concept patches.
struct ArchSpec {
    std::string name;
    int image_size = 32;
    int in_channels = 3;
    int num_classes = 2;
    std::vector<ConvLayerSpec> convs;

    // "convnet-a" (8x8 features at 32px) and "convnet-b" (16x16 features).
    static ArchSpec preset(const std::string& name, int num_classes, int image_size = 32);

    int feature_channels() const;
    // Spatial size of the feature layer for the configured image size.
    std::pair<int, int> feature_size() const;
};

class ConvNet {
  public:
    ConvNet() = default;
    ConvNet(ArchSpec arch, std::uint64_t seed);

    const ArchSpec& arch() const { return arch_; }
    const std::string& id() const { return id_; }
    void set_id(std::string id) { id_ = std::move(id); }

    struct Output {
        ag::Var features;
        ag::Var logits;
    };

    // images: [N, C, H, W] matching the arch input contract.
    ag::Var features(const ag::Var& images) const;
    ag::Var head(const ag::Var& features) const;
    Output forward(const ag::Var& images) const;

    // Inference without graph recording, in chunks of `batch` images.
    Tensor logits(const Tensor& images, int batch = 128) const;
    Tensor feature_values(const Tensor& images, int batch = 128) const;

    void check_input(const Dims& dims) const;

    std::vector<ag::Var> parameters() const;
    std::vector<ag::Var> head_parameters() const;
    std::vector<ag::Var> body_parameters() const;
    std::size_t parameter_count() const;

    // 1 keeps a feature channel, 0 prunes it (activation forced to zero).
    const std::vector<double>& channel_mask() const { return mask_; }
    void set_channel_mask(std::vector<double> mask);
    std::vector<int> pruned_channels() const;

    // Deep copy with independent parameter storage.
    ConvNet clone() const;

    // FNV-1a over the raw parameter bytes.
    std::uint64_t body_hash() const;
    std::uint64_t head_hash() const;

    void save(const std::filesystem::path& path) const;
    static ConvNet load(const std::filesystem::path& path);

  private:
    ArchSpec arch_;
    std::string id_;
    std::vector<ag::Var> conv_w_;
    std::vector<ag::Var> conv_b_;
    ag::Var head_w_;
    ag::Var head_b_;
    std::vector<double> mask_;
};

std::uint64_t hash_parameters(const std::vector<ag::Var>& params);

}  // namespace crayon
