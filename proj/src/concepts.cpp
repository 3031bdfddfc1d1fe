#include "crayon/concepts.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace crayon {

using nlohmann::json;

namespace {

Region cell_region(int i, int j, int h, int w, int img_h, int img_w, double fraction) {
    const int side_x = std::clamp(static_cast<int>(std::lround(fraction * img_w)), 1, img_w);
    const int side_y = std::clamp(static_cast<int>(std::lround(fraction * img_h)), 1, img_h);
    const double cx = (j + 0.5) * img_w / w;
    const double cy = (i + 0.5) * img_h / h;
    Region r;
    r.x0 = std::clamp(static_cast<int>(std::lround(cx - side_x / 2.0)), 0, img_w - side_x);
    r.y0 = std::clamp(static_cast<int>(std::lround(cy - side_y / 2.0)), 0, img_h - side_y);
    r.x1 = r.x0 + side_x;
    r.y1 = r.y0 + side_y;
    return r;
}

}  // namespace

std::vector<ConceptPatch> extract_patches(const ConvNet& model, const Dataset& data, const PatchOptions& o) {
    if (o.per_neuron < 1) throw std::invalid_argument("extract_patches: per_neuron must be positive");
    if (static_cast<int>(data.size()) < o.per_neuron) {
        throw std::invalid_argument("extract_patches: dataset has fewer than " + std::to_string(o.per_neuron) +
                                    " images");
    }
    const Tensor feats = model.feature_values(data.all_images(), o.batch);
    const int n = feats.dim(0), c = feats.dim(1), h = feats.dim(2), w = feats.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int img = data.image_size();

    struct Hit {
        double score;
        int cell;
        int image;
    };
    std::vector<ConceptPatch> out;
    std::vector<Hit> hits(static_cast<std::size_t>(n));
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < n; ++i) {
            const double* p = feats.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
            const auto best = std::max_element(p, p + plane) - p;
            hits[static_cast<std::size_t>(i)] = {p[best], static_cast<int>(best), i};
        }
        std::partial_sort(hits.begin(), hits.begin() + o.per_neuron, hits.end(), [&](const Hit& a, const Hit& b) {
            if (a.score != b.score) return a.score > b.score;
            return data.examples[static_cast<std::size_t>(a.image)].image_id <
                   data.examples[static_cast<std::size_t>(b.image)].image_id;
        });
        for (int r = 0; r < o.per_neuron; ++r) {
            const Hit& hit = hits[static_cast<std::size_t>(r)];
            ConceptPatch p;
            p.neuron_id = ch;
            p.image_id = data.examples[static_cast<std::size_t>(hit.image)].image_id;
            p.region = cell_region(hit.cell / w, hit.cell % w, h, w, img, img, o.region_fraction);
            p.rank = r + 1;
            p.activation = hit.score;
            out.push_back(std::move(p));
        }
    }
    // Global dedup: identical (image, region) pairs share one patch id.
    std::map<std::pair<std::string, std::array<int, 4>>, std::string> ids;
    for (auto& p : out) {
        const auto key = std::pair{p.image_id, std::array<int, 4>{p.region.x0, p.region.y0, p.region.x1, p.region.y1}};
        auto it = ids.find(key);
        if (it == ids.end()) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "patch-%05zu", ids.size());
            it = ids.emplace(key, buf).first;
        }
        p.patch_id = it->second;
    }
    return out;
}

std::vector<UniquePatch> unique_patches(const std::vector<ConceptPatch>& patches) {
    std::vector<UniquePatch> out;
    std::map<std::string, std::size_t> pos;
    for (const auto& p : patches) {
        auto it = pos.find(p.patch_id);
        if (it == pos.end()) {
            it = pos.emplace(p.patch_id, out.size()).first;
            out.push_back({p.patch_id, p.image_id, p.region, {}});
        }
        auto& u = out[it->second];
        if (u.image_id != p.image_id || !(u.region == p.region)) {
            throw std::invalid_argument("patch id " + p.patch_id + " names two different regions");
        }
        u.neurons.push_back(p.neuron_id);
    }
    return out;
}

void save_patch_manifest(const std::vector<ConceptPatch>& patches, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write patch manifest " + path.string());
    for (const auto& p : patches) {
        json j = {{"patch_id", p.patch_id},
                  {"neuron_id", p.neuron_id},
                  {"image_id", p.image_id},
                  {"region", {p.region.x0, p.region.y0, p.region.x1, p.region.y1}},
                  {"rank", p.rank},
                  {"activation", p.activation}};
        out << j.dump() << '\n';
    }
}

std::vector<ConceptPatch> load_patch_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read patch manifest " + path.string());
    std::vector<ConceptPatch> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        ConceptPatch p;
        p.patch_id = j.at("patch_id").get<std::string>();
        p.neuron_id = j.at("neuron_id").get<int>();
        p.image_id = j.at("image_id").get<std::string>();
        const auto r = j.at("region").get<std::vector<int>>();
        if (r.size() != 4) throw std::runtime_error("patch region must have 4 coordinates");
        p.region = {r[0], r[1], r[2], r[3]};
        p.rank = j.at("rank").get<int>();
        p.activation = j.at("activation").get<double>();
        out.push_back(std::move(p));
    }
    return out;
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::relevant:
            return "relevant";
        case Verdict::irrelevant:
            return "irrelevant";
        default:
            return "undetermined";
    }
}

Verdict parse_verdict(const std::string& s) {
    if (s == "relevant") return Verdict::relevant;
    if (s == "irrelevant") return Verdict::irrelevant;
    if (s == "undetermined") return Verdict::undetermined;
    throw std::invalid_argument("unknown verdict: " + s);
}

std::vector<NeuronRelevance> decide_relevance(const std::vector<ConceptPatch>& patches,
                                              const std::map<std::string, Answer>& answers) {
    std::set<std::string> known;
    for (const auto& p : patches) known.insert(p.patch_id);
    for (const auto& [id, a] : answers) {
        if (!known.count(id)) throw std::invalid_argument("annotation for unknown patch " + id);
    }
    std::map<int, NeuronRelevance> by_neuron;
    for (const auto& p : patches) {
        NeuronRelevance& r = by_neuron[p.neuron_id];
        r.neuron_id = p.neuron_id;
        const auto it = answers.find(p.patch_id);
        if (it == answers.end()) ++r.unanswered;
        else if (it->second == Answer::yes) ++r.yes;
        else ++r.no;
    }
    std::vector<NeuronRelevance> out;
    for (auto& [id, r] : by_neuron) {
        r.verdict = r.yes > r.no ? Verdict::relevant : (r.no > r.yes ? Verdict::irrelevant : Verdict::undetermined);
        out.push_back(r);
    }
    return out;
}

std::map<std::string, Answer> patch_answers(const std::vector<AnnotationRecord>& records) {
    std::map<std::string, std::pair<int, int>> votes;
    for (const auto& r : records) {
        if (r.subject_kind != SubjectKind::patch) continue;
        auto& v = votes[r.subject_id];
        (r.answer == Answer::yes ? v.first : v.second) += 1;
    }
    std::map<std::string, Answer> out;
    for (const auto& [id, v] : votes) {
        if (v.first != v.second) out[id] = v.first > v.second ? Answer::yes : Answer::no;
    }
    return out;
}

std::vector<int> irrelevant_neurons(const std::vector<NeuronRelevance>& relevance) {
    std::vector<int> out;
    for (const auto& r : relevance) {
        if (r.verdict == Verdict::irrelevant) out.push_back(r.neuron_id);
    }
    return out;
}

std::string neuron_relevance_to_json(const std::vector<NeuronRelevance>& relevance) {
    json arr = json::array();
    for (const auto& r : relevance) {
        arr.push_back({{"neuron_id", r.neuron_id},
                       {"verdict", to_string(r.verdict)},
                       {"yes", r.yes},
                       {"no", r.no},
                       {"unanswered", r.unanswered}});
    }
    return json{{"neurons", arr}}.dump(2);
}

std::vector<NeuronRelevance> neuron_relevance_from_json(const std::string& text) {
    const json j = json::parse(text);
    std::vector<NeuronRelevance> out;
    for (const auto& n : j.at("neurons")) {
        NeuronRelevance r;
        r.neuron_id = n.at("neuron_id").get<int>();
        r.verdict = parse_verdict(n.at("verdict").get<std::string>());
        r.yes = n.value("yes", 0);
        r.no = n.value("no", 0);
        r.unanswered = n.value("unanswered", 0);
        out.push_back(r);
    }
    return out;
}

std::vector<AnnotationRecord> oracle_annotate_patches(const std::vector<ConceptPatch>& patches, const Dataset& data,
                                                      double tau, const std::string& annotator_id) {
    std::vector<AnnotationRecord> out;
    const std::string stamp = utc_timestamp();
    for (const auto& u : unique_patches(patches)) {
        const auto idx = data.index_of(u.image_id);
        if (!idx) throw std::invalid_argument("oracle: unknown image " + u.image_id);
        const auto& e = data.examples[static_cast<std::size_t>(*idx)];
        if (!e.mask) throw std::invalid_argument("oracle: image " + u.image_id + " has no mask");
        AnnotationRecord r;
        r.task_id = "patch:" + u.patch_id;
        r.subject_kind = SubjectKind::patch;
        r.subject_id = u.patch_id;
        r.annotator_id = annotator_id;
        r.answer = oracle_annotate_patch(*e.mask, u.region, tau);
        r.timestamp = stamp;
        out.push_back(std::move(r));
    }
    return out;
}

void apply_pruning(ConvNet& model, const std::vector<int>& neurons) {
    std::vector<double> mask = model.channel_mask();
    for (int n : neurons) {
        if (n < 0 || n >= static_cast<int>(mask.size())) {
            throw std::invalid_argument("neuron id " + std::to_string(n) + " is not a feature channel");
        }
        mask[static_cast<std::size_t>(n)] = 0.0;
    }
    if (std::all_of(mask.begin(), mask.end(), [](double m) { return m == 0.0; })) {
        throw std::invalid_argument("refusing to prune every feature channel");
    }
    model.set_channel_mask(std::move(mask));
}

ConvNet prune_and_finetune(const ConvNet& model, const std::vector<int>& neurons, const Dataset& data,
                           const TrainConfig& config, std::vector<EpochStats>* history) {
    ConvNet out = model.clone();
    apply_pruning(out, neurons);
    auto h = train_head(out, data, config);
    if (history) *history = std::move(h);
    return out;
}

}  // namespace crayon
