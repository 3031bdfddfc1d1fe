#include "crayon/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "crayon/ops.hpp"
#include "json.hpp"

namespace crayon {

using nlohmann::json;
namespace fs = std::filesystem;

ScoreKind parse_score_kind(const std::string& s) {
    if (s == "log_prob") return ScoreKind::log_prob;
    if (s == "logit") return ScoreKind::logit;
    throw std::invalid_argument("unknown score kind: " + s);
}

std::string to_string(ScoreKind k) { return k == ScoreKind::log_prob ? "log_prob" : "logit"; }

ag::Var gradcam(const ag::Var& features, const ag::Var& logits, const std::vector<int>& targets, ScoreKind kind,
                bool create_graph) {
    const Dims& fd = features.dims();
    if (fd.size() != 4) throw std::invalid_argument("gradcam: features must be [N,C,h,w]");
    const int n = fd[0];
    const int k = logits.dims().at(1);
    if (static_cast<int>(targets.size()) != n) throw std::invalid_argument("gradcam: one target per image required");
    for (int t : targets) {
        if (t < 0 || t >= k) throw std::invalid_argument("gradcam: invalid class index " + std::to_string(t));
    }
    if (!features.requires_grad()) throw std::invalid_argument("gradcam: features are not differentiable");

    const ag::Var scores = kind == ScoreKind::log_prob ? ag::log_softmax(logits) : logits;
    const ag::Var score = ag::sum_all(ag::gather_cols(scores, targets));
    const ag::Var g = ag::grad(score, {features}, create_graph)[0];

    std::optional<ag::NoGradGuard> frozen;
    if (!create_graph) frozen.emplace();
    const ag::Var weights = ag::scale(ag::spatial_sum(g), 1.0 / (static_cast<double>(fd[2]) * fd[3]));
    const ag::Var cam = ag::relu(ag::weighted_channel_sum(features, weights));
    return ag::div_samples(cam, ag::sample_max(cam));
}

Tensor reference_maps(const ConvNet& model, const Tensor& images, const std::vector<int>& targets, ScoreKind kind,
                      int batch) {
    model.check_input(images.dims());
    const int n = images.dim(0);
    if (static_cast<int>(targets.size()) != n) throw std::invalid_argument("reference_maps: target count mismatch");
    const Tensor feats = model.feature_values(images, batch);
    const auto [h, w] = std::pair{feats.dim(2), feats.dim(3)};
    Tensor out({n, h, w});
    const std::size_t per_feat = feats.sample_size();
    const std::size_t per_map = static_cast<std::size_t>(h) * w;
    for (int start = 0; start < n; start += batch) {
        const int count = std::min(batch, n - start);
        Dims d = feats.dims();
        d[0] = count;
        // Fresh leaf: the map never sees gradients from the body parameters.
        ag::Var a = ag::Var::parameter(Tensor(
            d, std::vector<double>(feats.data() + start * per_feat, feats.data() + (start + count) * per_feat)));
        ag::GradModeGuard on(true);
        const ag::Var logits = model.head(a);
        const std::vector<int> t(targets.begin() + start, targets.begin() + start + count);
        const Tensor maps = gradcam(a, logits, t, kind, false).value();
        std::copy(maps.data(), maps.data() + maps.size(), out.data() + start * per_map);
    }
    return out;
}

SaliencyMap compute_reference_map(const ConvNet& model, const Tensor& image, int target_class, ScoreKind kind) {
    if (image.rank() != 3) throw std::invalid_argument("compute_reference_map: image must be [C,H,W]");
    Dims d = image.dims();
    d.insert(d.begin(), 1);
    const Tensor maps = reference_maps(model, image.reshaped(d), {target_class}, kind, 1);
    SaliencyMap m;
    m.source_model_id = model.id();
    m.target_class = target_class;
    m.values = maps.reshaped({maps.dim(1), maps.dim(2)});
    return m;
}

std::vector<SaliencyMap> compute_reference_maps(const ConvNet& model, const Dataset& data, ScoreKind kind, int batch) {
    const Tensor maps = reference_maps(model, data.all_images(), data.labels(), kind, batch);
    const int h = maps.dim(1), w = maps.dim(2);
    const std::size_t per = static_cast<std::size_t>(h) * w;
    std::vector<SaliencyMap> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        SaliencyMap m;
        m.image_id = data.examples[i].image_id;
        m.source_model_id = model.id();
        m.target_class = data.examples[i].class_label;
        m.values = Tensor({h, w}, std::vector<double>(maps.data() + i * per, maps.data() + (i + 1) * per));
        out.push_back(std::move(m));
    }
    return out;
}

TrainableMaps compute_trainable_maps(const ConvNet& model, const ag::Var& images, const std::vector<int>& targets,
                                     ScoreKind kind) {
    if (!ag::grad_enabled()) throw std::logic_error("compute_trainable_maps: gradient recording is disabled");
    auto out = model.forward(images);
    if (!out.features.requires_grad()) {
        throw std::logic_error("compute_trainable_maps: model parameters do not require gradients");
    }
    return {gradcam(out.features, out.logits, targets, kind, true), out.logits};
}

ag::Var compute_trainable_map(const ConvNet& model, const Tensor& image, int target_class, ScoreKind kind) {
    Dims d = image.dims();
    d.insert(d.begin(), 1);
    const auto t = compute_trainable_maps(model, ag::Var::constant(image.reshaped(d)), {target_class}, kind);
    const Dims& md = t.maps.dims();
    return ag::reshape(t.maps, {md[1], md[2]});
}

void check_saliency_map(const Tensor& values) {
    double mx = 0.0;
    for (double v : values.values()) {
        if (!(v >= 0.0)) throw std::domain_error("saliency map has a negative or NaN entry");
        mx = std::max(mx, v);
    }
    if (mx != 0.0 && mx != 1.0) throw std::domain_error("nonzero saliency map is not max-normalized");
}

Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w) {
    if (map.rank() != 2) throw std::invalid_argument("upsample_bilinear: expected [h,w]");
    const int h = map.dim(0), w = map.dim(1);
    auto coord = [](int i, int in, int out, int& i0, int& i1, double& f) {
        double src = (i + 0.5) * in / static_cast<double>(out) - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        i0 = static_cast<int>(std::floor(src));
        i1 = std::min(i0 + 1, in - 1);
        f = src - i0;
    };
    Tensor out({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        int y0, y1;
        double fy;
        coord(y, h, out_h, y0, y1, fy);
        for (int x = 0; x < out_w; ++x) {
            int x0, x1;
            double fx;
            coord(x, w, out_w, x0, x1, fx);
            const double top = (1 - fx) * map[y0 * w + x0] + fx * map[y0 * w + x1];
            const double bottom = (1 - fx) * map[y1 * w + x0] + fx * map[y1 * w + x1];
            out[static_cast<std::size_t>(y) * out_w + x] = (1 - fy) * top + fy * bottom;
        }
    }
    return out;
}

Tensor resample_map(const Tensor& map, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resample_map: empty target shape");
    Tensor out = (map.dim(0) == out_h && map.dim(1) == out_w) ? map : upsample_bilinear(map, out_h, out_w);
    double mx = 0.0;
    for (double& v : out.values()) {
        v = std::max(v, 0.0);
        mx = std::max(mx, v);
    }
    if (mx > 0.0) {
        for (double& v : out.values()) v /= mx;
    }
    return out;
}

OverlayStyle parse_overlay_style(const std::string& s) {
    if (s == "original") return OverlayStyle::original;
    if (s == "overlay") return OverlayStyle::overlay;
    if (s == "red") return OverlayStyle::red;
    throw std::invalid_argument("unknown overlay style: " + s);
}

Tensor render_overlay(const Tensor& image, const Tensor& map, OverlayStyle style, const RenderOptions& o) {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("render_overlay: image must be [3,H,W]");
    if (style == OverlayStyle::original) return image;
    const int h = image.dim(1), w = image.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const Tensor up = upsample_bilinear(map, h, w);
    Tensor out = image;
    if (style == OverlayStyle::overlay) {
        static const double highlight[3] = {1.0, 0.85, 0.0};
        for (std::size_t p = 0; p < plane; ++p) {
            const double a = o.overlay_opacity * std::clamp(up[p], 0.0, 1.0);
            if (a == 0.0) continue;
            for (int c = 0; c < 3; ++c) out[c * plane + p] = (1 - a) * image[c * plane + p] + a * highlight[c];
        }
    } else {
        static const double red[3] = {1.0, 0.0, 0.0};
        for (std::size_t p = 0; p < plane; ++p) {
            if (up[p] < o.red_threshold) continue;
            for (int c = 0; c < 3; ++c) out[c * plane + p] = (1 - o.red_mix) * image[c * plane + p] + o.red_mix * red[c];
        }
    }
    return out;
}

Tensor render_patch(const Tensor& image, const Region& r, int thickness) {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("render_patch: image must be [3,H,W]");
    const int h = image.dim(1), w = image.dim(2);
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > w || r.y1 > h || r.x0 >= r.x1 || r.y0 >= r.y1) {
        throw std::invalid_argument("render_patch: region outside image");
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out = image;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            const bool edge = x < r.x0 + thickness || x >= r.x1 - thickness || y < r.y0 + thickness ||
                              y >= r.y1 - thickness;
            if (!edge) continue;
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            out[p] = 1.0;
            out[plane + p] = 0.0;
            out[2 * plane + p] = 0.0;
        }
    }
    return out;
}

void save_saliency_store(const std::vector<SaliencyMap>& maps, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.jsonl");
    std::ofstream blob(dir / "maps.f32", std::ios::binary);
    if (!manifest || !blob) throw std::runtime_error("cannot write saliency store " + dir.string());
    std::size_t offset = 0;
    std::vector<float> buf;
    for (const auto& m : maps) {
        check_saliency_map(m.values);
        json j = {{"image_id", m.image_id},   {"class", m.target_class}, {"source_model_id", m.source_model_id},
                  {"offset", offset},         {"height", m.height()},    {"width", m.width()}};
        manifest << j.dump() << '\n';
        buf.assign(m.values.values().begin(), m.values.values().end());
        blob.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        offset += buf.size();
    }
    if (!blob) throw std::runtime_error("failed writing saliency maps in " + dir.string());
}

std::vector<SaliencyMap> load_saliency_store(const fs::path& dir) {
    std::ifstream manifest(dir / "manifest.jsonl");
    std::ifstream blob(dir / "maps.f32", std::ios::binary);
    if (!manifest || !blob) throw std::runtime_error("missing saliency store at " + dir.string());
    std::vector<SaliencyMap> out;
    std::string line;
    std::vector<float> buf;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        SaliencyMap m;
        m.image_id = j.at("image_id").get<std::string>();
        m.target_class = j.at("class").get<int>();
        m.source_model_id = j.value("source_model_id", "");
        const int h = j.at("height").get<int>(), w = j.at("width").get<int>();
        const auto offset = j.at("offset").get<std::size_t>();
        buf.resize(static_cast<std::size_t>(h) * w);
        blob.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
        blob.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!blob) throw std::runtime_error("truncated saliency store at " + m.image_id);
        m.values = Tensor({h, w}, std::vector<double>(buf.begin(), buf.end()));
        out.push_back(std::move(m));
    }
    return out;
}

MapIndex index_maps(const std::vector<SaliencyMap>& maps) {
    MapIndex idx;
    for (const auto& m : maps) {
        if (!idx.emplace(m.image_id, &m).second) throw std::invalid_argument("duplicate saliency map for " + m.image_id);
    }
    return idx;
}

}  // namespace crayon
