#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crayon/tensor.hpp"

namespace crayon {

// Binary grid, row-major, 1 = foreground.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

struct GroupId {
    int class_label = 0;
    int spurious_label = 0;
    auto operator<=>(const GroupId&) const = default;
};

std::string group_name(const GroupId& g);

struct GroupedExample {
    std::string image_id;
    Tensor image;  // [3, H, W], channel-first
    int class_label = 0;
    int spurious_label = 0;
    std::optional<Mask> mask;

    GroupId group() const { return {class_label, spurious_label}; }
};

struct Dataset {
    std::string name;
    int num_classes = 0;
    std::vector<std::string> class_names;
    std::vector<GroupedExample> examples;

    std::size_t size() const { return examples.size(); }
    int image_size() const;  // square images only
    bool has_masks() const;
    // Checks labels, shapes and masks; throws on the first violation.
    void validate() const;

    Tensor images(const std::vector<int>& indices) const;  // [n, 3, H, W]
    Tensor all_images() const;
    std::vector<int> labels() const;
    std::vector<int> labels(const std::vector<int>& indices) const;
    std::map<GroupId, int> group_histogram() const;
    std::optional<int> index_of(const std::string& image_id) const;
    std::string class_name(int c) const;
};

// Hash over ids, labels and every pixel.
std::uint64_t dataset_hash(const Dataset& d);

// Foreground shapes, in class order.
const std::vector<std::string>& synthetic_shape_names();

struct SynthSpec {
    int num_classes = 2;
    double rho = 0.95;
    int per_class = 500;
    // counts[class][background]; overrides rho / per_class when non-empty.
    std::vector<std::vector<int>> group_counts;
    int image_size = 32;
    std::uint64_t seed = 0;
    std::string id_prefix = "img";
    double noise = 0.1;
    double background_contrast = 0.3;
    double radius_min = 8.0;
    double radius_max = 12.0;
    double bar_width = 0.5;
    double foreground_jitter = 0.25;
    bool class_intensity = true;  // foreground gray level depends on class

    // counts[class][background] realized by this spec.
    std::vector<std::vector<int>> counts() const;
    // Every group gets `per_group` images.
    static SynthSpec balanced(int num_classes, int per_group, std::uint64_t seed);
};

SynthSpec synth_spec_from_json(const std::string& json_text);
std::string synth_spec_to_json(const SynthSpec& spec);

Dataset generate_synthetic(const SynthSpec& spec);

struct MixedSets {
    Dataset mixed_same;
    Dataset mixed_rand;
};

// Background donors are drawn uniformly from other images (same class for
// Mixed-Same). spurious_label of a mixed image is the donor's background id.
MixedSets make_mixed_sets(const Dataset& d, std::uint64_t seed);

// Directory layout: dataset.json, metadata.jsonl, images/*.png, masks/*.png.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);

struct LoadOptions {
    std::string split = "train";  // waterbirds/celeba: train|val|test; in9: subdirectory name
    int resize = 256;
    int crop = 224;
    bool normalize = true;  // ImageNet mean/std
    std::string in9_variant = "original";
};

// image [3,H,W] with values in [0,1] (clamped) -> PNG bytes.
std::vector<std::uint8_t> encode_png(const Tensor& image);

// layout: crayon | waterbirds | celeba | in9
Dataset load_grouped_dataset(const std::filesystem::path& dir, const std::string& layout,
                             const LoadOptions& options = {});

}  // namespace crayon
