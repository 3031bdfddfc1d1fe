#include "crayon/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "crayon/hash.hpp"
#include "json.hpp"

namespace crayon {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "CRAYONNET1\n";

Tensor uniform_tensor(Dims dims, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(dims));
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

int conv_out(int in, const ConvLayerSpec& c) { return (in + 2 * c.pad - c.kernel) / c.stride + 1; }

json arch_to_json(const ArchSpec& a) {
    json convs = json::array();
    for (const auto& c : a.convs) {
        convs.push_back({{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride}, {"pad", c.pad}});
    }
    return {{"name", a.name},
            {"image_size", a.image_size},
            {"in_channels", a.in_channels},
            {"num_classes", a.num_classes},
            {"convs", convs}};
}

ArchSpec arch_from_json(const json& j) {
    ArchSpec a;
    a.name = j.at("name").get<std::string>();
    a.image_size = j.at("image_size").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    a.num_classes = j.at("num_classes").get<int>();
    for (const auto& c : j.at("convs")) {
        a.convs.push_back({c.at("out_channels").get<int>(), c.at("kernel").get<int>(), c.at("stride").get<int>(),
                           c.at("pad").get<int>()});
    }
    return a;
}

}  // namespace

ArchSpec ArchSpec::preset(const std::string& name, int num_classes, int image_size) {
    ArchSpec a;
    a.name = name;
    a.num_classes = num_classes;
    a.image_size = image_size;
    if (name == "convnet-a") {
        a.convs = {{16, 3, 1, 1}, {32, 3, 2, 1}, {32, 3, 2, 1}};
    } else if (name == "convnet-b") {
        a.convs = {{12, 3, 1, 1}, {24, 3, 2, 1}, {24, 3, 1, 1}};
    } else if (name == "tiny") {
        a.convs = {{3, 3, 2, 1}, {4, 3, 2, 1}};
    } else {
        throw std::invalid_argument("unknown architecture preset: " + name);
    }
    return a;
}

int ArchSpec::feature_channels() const {
    if (convs.empty()) throw std::logic_error("architecture has no conv layers");
    return convs.back().out_channels;
}

std::pair<int, int> ArchSpec::feature_size() const {
    int s = image_size;
    for (const auto& c : convs) s = conv_out(s, c);
    return {s, s};
}

ConvNet::ConvNet(ArchSpec arch, std::uint64_t seed) : arch_(std::move(arch)) {
    if (arch_.convs.empty() || arch_.num_classes < 2 || arch_.in_channels < 1) {
        throw std::invalid_argument("invalid architecture spec");
    }
    if (arch_.feature_size().first <= 0) throw std::invalid_argument("image too small for architecture");
    std::mt19937_64 rng(seed);
    int in = arch_.in_channels;
    for (const auto& c : arch_.convs) {
        const double fan_in = static_cast<double>(in) * c.kernel * c.kernel;
        const double bound = 1.0 / std::sqrt(fan_in);
        conv_w_.push_back(ag::Var::parameter(uniform_tensor({c.out_channels, in, c.kernel, c.kernel}, bound, rng)));
        conv_b_.push_back(ag::Var::parameter(uniform_tensor({c.out_channels}, bound, rng)));
        in = c.out_channels;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    head_w_ = ag::Var::parameter(uniform_tensor({arch_.num_classes, in}, bound, rng));
    head_b_ = ag::Var::parameter(uniform_tensor({arch_.num_classes}, bound, rng));
    mask_.assign(static_cast<std::size_t>(in), 1.0);
    id_ = arch_.name + "-seed" + std::to_string(seed);
}

void ConvNet::check_input(const Dims& dims) const {
    if (dims.size() != 4 || dims[1] != arch_.in_channels || dims[2] != arch_.image_size ||
        dims[3] != arch_.image_size) {
        throw std::invalid_argument("image shape " + dims_to_string(dims) + " does not match model input [N," +
                                    std::to_string(arch_.in_channels) + "," + std::to_string(arch_.image_size) + "," +
                                    std::to_string(arch_.image_size) + "]");
    }
}

ag::Var ConvNet::features(const ag::Var& images) const {
    check_input(images.dims());
    ag::Var x = images;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        const auto& c = arch_.convs[i];
        x = ag::relu(ag::add_channel_bias(ag::conv2d(x, conv_w_[i], {c.stride, c.pad}), conv_b_[i]));
    }
    return ag::mul_channel_const(x, mask_);
}

ag::Var ConvNet::head(const ag::Var& features) const {
    const auto& d = features.dims();
    if (d.size() != 4 || d[1] != arch_.feature_channels()) {
        throw std::invalid_argument("head: unexpected feature shape " + dims_to_string(d));
    }
    ag::Var pooled = ag::scale(ag::spatial_sum(features), 1.0 / (static_cast<double>(d[2]) * d[3]));
    return ag::add_row_bias(ag::matmul(pooled, head_w_, false, true), head_b_);
}

ConvNet::Output ConvNet::forward(const ag::Var& images) const {
    ag::Var a = features(images);
    return {a, head(a)};
}

namespace {
template <typename F>
Tensor chunked(const Tensor& images, int batch, F&& fn) {
    const int n = images.dim(0);
    const std::size_t per = images.sample_size();
    std::vector<double> out;
    Dims out_dims;
    for (int start = 0; start < n; start += batch) {
        const int count = std::min(batch, n - start);
        Dims d = images.dims();
        d[0] = count;
        Tensor chunk(d, std::vector<double>(images.data() + start * per, images.data() + (start + count) * per));
        Tensor r = fn(chunk);
        if (out_dims.empty()) out_dims = r.dims();
        out.insert(out.end(), r.values().begin(), r.values().end());
    }
    if (out_dims.empty()) return Tensor();
    out_dims[0] = n;
    return Tensor(out_dims, std::move(out));
}
}  // namespace

Tensor ConvNet::logits(const Tensor& images, int batch) const {
    ag::NoGradGuard no_grad;
    check_input(images.dims());
    return chunked(images, batch, [&](const Tensor& t) { return forward(ag::Var::constant(t)).logits.value(); });
}

Tensor ConvNet::feature_values(const Tensor& images, int batch) const {
    ag::NoGradGuard no_grad;
    check_input(images.dims());
    return chunked(images, batch, [&](const Tensor& t) { return features(ag::Var::constant(t)).value(); });
}

std::vector<ag::Var> ConvNet::parameters() const {
    std::vector<ag::Var> p = body_parameters();
    p.push_back(head_w_);
    p.push_back(head_b_);
    return p;
}

std::vector<ag::Var> ConvNet::head_parameters() const { return {head_w_, head_b_}; }

std::vector<ag::Var> ConvNet::body_parameters() const {
    std::vector<ag::Var> p;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        p.push_back(conv_w_[i]);
        p.push_back(conv_b_[i]);
    }
    return p;
}

std::size_t ConvNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.value().size();
    return n;
}

void ConvNet::set_channel_mask(std::vector<double> mask) {
    if (mask.size() != mask_.size()) throw std::invalid_argument("channel mask size mismatch");
    for (double m : mask) {
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("channel mask entries must be 0 or 1");
    }
    mask_ = std::move(mask);
}

std::vector<int> ConvNet::pruned_channels() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < mask_.size(); ++i) {
        if (mask_[i] == 0.0) out.push_back(static_cast<int>(i));
    }
    return out;
}

ConvNet ConvNet::clone() const {
    ConvNet c;
    c.arch_ = arch_;
    c.id_ = id_;
    c.mask_ = mask_;
    for (const auto& w : conv_w_) c.conv_w_.push_back(ag::Var::parameter(w.value()));
    for (const auto& b : conv_b_) c.conv_b_.push_back(ag::Var::parameter(b.value()));
    c.head_w_ = ag::Var::parameter(head_w_.value());
    c.head_b_ = ag::Var::parameter(head_b_.value());
    return c;
}

std::uint64_t hash_parameters(const std::vector<ag::Var>& params) {
    std::uint64_t h = kFnvOffset;
    for (const auto& p : params) h = fnv1a(h, p.value().data(), p.value().size() * sizeof(double));
    return h;
}

std::uint64_t ConvNet::body_hash() const { return hash_parameters(body_parameters()); }
std::uint64_t ConvNet::head_hash() const { return hash_parameters(head_parameters()); }

void ConvNet::save(const std::filesystem::path& path) const {
    json header = {{"arch", arch_to_json(arch_)}, {"id", id_}, {"channel_mask", mask_}};
    json shapes = json::array();
    for (const auto& p : parameters()) shapes.push_back(p.dims());
    header["parameter_shapes"] = shapes;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic) - 1);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : parameters()) {
        out.write(reinterpret_cast<const char*>(p.value().data()),
                  static_cast<std::streamsize>(p.value().size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ConvNet ConvNet::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("not a crayon checkpoint: " + path.string());
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const json header = json::parse(text);

    ConvNet net(arch_from_json(header.at("arch")), 0);
    net.id_ = header.at("id").get<std::string>();
    net.mask_ = header.at("channel_mask").get<std::vector<double>>();
    for (auto& p : net.parameters()) {
        Tensor& t = p.mutable_value();
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    return net;
}

}  // namespace crayon
