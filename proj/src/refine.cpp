#include "crayon/refine.hpp"

#include <iostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace crayon {

using nlohmann::json;

RefineMode parse_refine_mode(const std::string& s) {
    if (s == "attention") return RefineMode::attention;
    if (s == "pruning") return RefineMode::pruning;
    if (s == "all") return RefineMode::all;
    if (s == "erm") return RefineMode::erm;
    throw std::invalid_argument("unknown refinement mode: " + s);
}

std::string to_string(RefineMode m) {
    switch (m) {
        case RefineMode::attention:
            return "attention";
        case RefineMode::pruning:
            return "pruning";
        case RefineMode::all:
            return "all";
        default:
            return "erm";
    }
}

TrainConfig RefinementConfig::train_config() const { return {optimizer, epochs, batch_size, seed}; }
TrainConfig RefinementConfig::prune_config() const { return {prune_optimizer, prune_epochs, batch_size, seed}; }

namespace {

json optimizer_to_json(const OptimizerConfig& o) {
    return {{"kind", o.kind},   {"learning_rate", o.learning_rate}, {"weight_decay", o.weight_decay},
            {"beta1", o.beta1}, {"beta2", o.beta2},                 {"epsilon", o.epsilon},
            {"momentum", o.momentum}};
}

OptimizerConfig optimizer_from_json(const json& j, OptimizerConfig o) {
    o.kind = j.value("kind", o.kind);
    o.learning_rate = j.value("learning_rate", o.learning_rate);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.epsilon = j.value("epsilon", o.epsilon);
    o.momentum = j.value("momentum", o.momentum);
    return o;
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    TrainConfig c;
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"), c.optimizer);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (c.epochs < 0 || c.batch_size < 1) throw std::invalid_argument("train config: bad epochs or batch_size");
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    return json{{"optimizer", optimizer_to_json(c.optimizer)},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed}}
        .dump(2);
}

std::string RefinementConfig::to_json() const {
    json j = {{"mode", to_string(mode)},
              {"alpha", weights.alpha},
              {"beta", weights.beta},
              {"optimizer", optimizer_to_json(optimizer)},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"seed", seed},
              {"reference_model_id", reference_model_id},
              {"score", crayon::to_string(score)},
              {"prune_optimizer", optimizer_to_json(prune_optimizer)},
              {"prune_epochs", prune_epochs}};
    j["annotation_subsample_n"] = annotation_subsample_n ? json(*annotation_subsample_n) : json(nullptr);
    return j.dump(2);
}

RefinementConfig RefinementConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    RefinementConfig c;
    if (j.contains("mode")) c.mode = parse_refine_mode(j.at("mode").get<std::string>());
    c.weights.alpha = j.value("alpha", c.weights.alpha);
    c.weights.beta = j.value("beta", c.weights.beta);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"), c.optimizer);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.reference_model_id = j.value("reference_model_id", c.reference_model_id);
    if (j.contains("score")) c.score = parse_score_kind(j.at("score").get<std::string>());
    if (j.contains("prune_optimizer")) c.prune_optimizer = optimizer_from_json(j.at("prune_optimizer"), c.prune_optimizer);
    c.prune_epochs = j.value("prune_epochs", c.prune_epochs);
    if (j.contains("annotation_subsample_n") && !j.at("annotation_subsample_n").is_null()) {
        c.annotation_subsample_n = j.at("annotation_subsample_n").get<long>();
    }
    c.weights.validate();
    if (c.epochs < 0 || c.prune_epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    return c;
}

ConvNet train_original(const Dataset& data, const ArchSpec& arch, std::uint64_t model_seed, const TrainConfig& config,
                       std::vector<EpochStats>* history) {
    ConvNet model(arch, model_seed);
    auto h = train_model(model, data, config, model.parameters());
    if (history) *history = std::move(h);
    return model;
}

RefineResult refine_erm(const ConvNet& model, const Dataset& data, const RefinementConfig& config) {
    RefineResult r{model.clone(), {}, {}, model.pruned_channels()};
    r.history = train_model(r.model, data, config.train_config(), r.model.parameters());
    return r;
}

RefineResult refine_attention(const ConvNet& model, const Dataset& data, const std::vector<SaliencyMap>& reference_maps,
                              const RelevanceSets& sets, const RefinementConfig& config) {
    RefineResult r{model.clone(), {}, sets, model.pruned_channels()};
    if (config.annotation_subsample_n) {
        r.sets = subsample_annotations(sets, *config.annotation_subsample_n, config.seed);
    }
    if (r.sets.relevant.empty()) warn("relevant set is empty; the L_rel term is dropped");
    if (r.sets.irrelevant.empty()) warn("irrelevant set is empty; the L_irrel term is dropped");
    const Guidance g =
        make_guidance(data, reference_maps, r.sets, config.weights, config.score, model.arch().feature_size());
    r.history = train_model(r.model, data, config.train_config(), r.model.parameters(), &g);
    return r;
}

RefineResult refine_pruning(const ConvNet& model, const Dataset& data, const std::vector<NeuronRelevance>& relevance,
                            const RefinementConfig& config) {
    RefineResult r;
    const auto neurons = irrelevant_neurons(relevance);
    r.model = prune_and_finetune(model, neurons, data, config.prune_config(), &r.history);
    r.pruned = r.model.pruned_channels();
    return r;
}

RefineResult refine_all(const ConvNet& model, const Dataset& data, const std::vector<SaliencyMap>& reference_maps,
                        const RelevanceSets& sets, const std::vector<NeuronRelevance>& relevance,
                        const RefinementConfig& config) {
    ConvNet pruned = model.clone();
    apply_pruning(pruned, irrelevant_neurons(relevance));
    return refine_attention(pruned, data, reference_maps, sets, config);
}

std::vector<SaliencyMap> resample_maps(const std::vector<SaliencyMap>& maps, int h, int w) {
    std::vector<SaliencyMap> out;
    out.reserve(maps.size());
    for (const auto& m : maps) {
        SaliencyMap s = m;
        s.values = resample_map(m.values, h, w);
        check_saliency_map(s.values);
        out.push_back(std::move(s));
    }
    return out;
}

RefineResult refine_transfer(const ConvNet& target, const Dataset& data, const std::vector<SaliencyMap>& source_maps,
                             const RelevanceSets& sets, const RefinementConfig& config) {
    const auto [h, w] = target.arch().feature_size();
    bool same = true;
    for (const auto& m : source_maps) same = same && m.height() == h && m.width() == w;
    if (same) return refine_attention(target, data, source_maps, sets, config);
    return refine_attention(target, data, resample_maps(source_maps, h, w), sets, config);
}

std::vector<SweepRow> sweep(const ConvNet& model, const Dataset& train, const Dataset& test,
                            const std::vector<SaliencyMap>& reference_maps, const RelevanceSets& sets,
                            const RefinementConfig& base, const std::string& param, const std::vector<double>& values) {
    if (param != "alpha" && param != "beta") throw std::invalid_argument("sweep parameter must be alpha or beta");
    std::vector<SweepRow> rows;
    for (double v : values) {
        RefinementConfig c = base;
        (param == "alpha" ? c.weights.alpha : c.weights.beta) = v;
        const RefineResult r = refine_attention(model, train, reference_maps, sets, c);
        rows.push_back({param, v, c.weights.alpha, c.weights.beta, group_metrics(r.model, test)});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "param,value,alpha,beta,wga,mga,average_accuracy\n";
    for (const auto& r : rows) {
        out << r.param << ',' << r.value << ',' << r.alpha << ',' << r.beta << ',' << r.report.wga << ','
            << r.report.mga << ',' << r.report.average_accuracy << '\n';
    }
    return out.str();
}

}  // namespace crayon
