// crayon command-line entry point.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "crayon/refine.hpp"
#include "crayon/service.hpp"
#include "httplib.h"
#include "json.hpp"

using namespace crayon;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path data_root() {
    const char* env = std::getenv("CRAYON_DATA_DIR");
    return env && *env ? fs::path(env) : fs::path("crayon-data");
}

// Relative paths resolve against CRAYON_DATA_DIR when it is set.
fs::path resolve(const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute() || !std::getenv("CRAYON_DATA_DIR")) return path;
    return data_root() / path;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

Dataset load_data(const std::string& dir, const std::string& layout) { return load_grouped_dataset(resolve(dir), layout); }

// rel.json (RelevanceSets) or a raw annotation JSONL store.
RelevanceSets load_relevance(const std::string& path, int responses) {
    const fs::path p = resolve(path);
    if (p.extension() == ".jsonl") return aggregate_saliency(read_annotations(p), responses);
    return RelevanceSets::from_json(read_text(p));
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON configuration file");
    cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
}

volatile std::sig_atomic_t g_stop = 0;
httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crayon: attention refinement from yes/no relevance annotations"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "0.1.0");

    // ---- synth-gen
    Common sg_c;
    std::string sg_out = "synthetic";
    std::optional<int> sg_balanced;
    bool sg_mixed = false;
    auto* sg = app.add_subcommand("synth-gen", "Generate a synthetic spurious-correlation dataset");
    add_common(sg, sg_c);
    sg->add_option("--spec", sg_c.config, "SynthSpec JSON (alias of --config)");
    sg->add_option("--out", sg_out, "Output directory");
    sg->add_option("--balanced-per-group", sg_balanced, "Equal count for every (class, background) group");
    sg->add_flag("--mixed", sg_mixed, "Also write mixed_same/ and mixed_rand/ subsets");

    // ---- train
    Common tr_c;
    std::string tr_data, tr_layout = "crayon", tr_arch = "convnet-a", tr_out = "model.ckpt", tr_history;
    std::uint64_t tr_model_seed = 0;
    std::optional<int> tr_epochs;
    auto* tr = app.add_subcommand("train", "Train the original (ERM) model");
    add_common(tr, tr_c);
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--layout", tr_layout, "crayon | waterbirds | celeba | in9");
    tr->add_option("--arch", tr_arch, "Architecture preset");
    tr->add_option("--model-seed", tr_model_seed, "Initialisation seed");
    tr->add_option("--epochs", tr_epochs);
    tr->add_option("--out", tr_out, "Checkpoint path");
    tr->add_option("--history", tr_history, "Per-epoch JSONL");

    // ---- saliency
    std::string sa_model, sa_data, sa_layout = "crayon", sa_out = "maps", sa_score = "log_prob";
    auto* sa = app.add_subcommand("saliency", "Compute Grad-CAM maps for every training image");
    sa->add_option("--model", sa_model)->required();
    sa->add_option("--data", sa_data)->required();
    sa->add_option("--layout", sa_layout);
    sa->add_option("--out", sa_out, "Saliency store directory");
    sa->add_option("--score", sa_score, "log_prob | logit");

    // ---- patches
    std::string pa_model, pa_data, pa_layout = "crayon", pa_out = "patches.jsonl";
    PatchOptions pa_opts;
    auto* pa = app.add_subcommand("patches", "Extract top-activating concept patches per feature channel");
    pa->add_option("--model", pa_model)->required();
    pa->add_option("--data", pa_data)->required();
    pa->add_option("--layout", pa_layout);
    pa->add_option("--out", pa_out, "Patch manifest JSONL");
    pa->add_option("--per-neuron", pa_opts.per_neuron);
    pa->add_option("--region-fraction", pa_opts.region_fraction);

    // ---- annotate-oracle
    std::string ao_data, ao_maps, ao_patches, ao_records = "oracle_annotations.jsonl", ao_rel = "relevance.json",
                                              ao_neurons = "neurons.json";
    double ao_tau = 0.6, ao_patch_tau = 0.5;
    auto* ao = app.add_subcommand("annotate-oracle", "Answer every task with the mask-based oracle");
    ao->add_option("--data", ao_data)->required();
    ao->add_option("--maps", ao_maps, "Saliency store");
    ao->add_option("--patches", ao_patches, "Patch manifest");
    ao->add_option("--tau", ao_tau, "Saliency mass threshold");
    ao->add_option("--patch-tau", ao_patch_tau, "Patch foreground coverage threshold");
    ao->add_option("--records", ao_records, "Annotation JSONL output");
    ao->add_option("--out", ao_rel, "RelevanceSets JSON output");
    ao->add_option("--neuron-out", ao_neurons, "Neuron relevance JSON output");

    // ---- aggregate
    std::string ag_store, ag_patches, ag_rel = "relevance.json", ag_neurons = "neurons.json";
    int ag_responses = 2;
    auto* agg = app.add_subcommand("aggregate", "Turn an annotation store into relevance files");
    agg->add_option("--store", ag_store)->required();
    agg->add_option("--responses", ag_responses, "Responses per saliency task (1 or 2)");
    agg->add_option("--patches", ag_patches, "Patch manifest (for neuron relevance)");
    agg->add_option("--out", ag_rel);
    agg->add_option("--neuron-out", ag_neurons);

    // ---- serve
    Common se_c;
    std::string se_data, se_layout = "crayon", se_maps, se_patches, se_store = "annotations.jsonl",
                         se_host = "127.0.0.1", se_ui;
    int se_port = 8080;
    bool se_oracle_mode = false;
    auto* se = app.add_subcommand("serve", "Run the annotation task service");
    add_common(se, se_c);
    se->add_option("--data", se_data)->required();
    se->add_option("--layout", se_layout);
    se->add_option("--maps", se_maps, "Saliency store (saliency tasks)");
    se->add_option("--patches", se_patches, "Patch manifest (patch tasks)");
    se->add_option("--store", se_store, "Annotation JSONL store");
    se->add_option("--host", se_host);
    se->add_option("--port", se_port);
    se->add_option("--ui-dir", se_ui, "Static files for the annotator UI");
    se->add_flag("--single-annotator", se_oracle_mode, "One response completes a saliency task");

    // ---- refine
    Common rf_c;
    std::string rf_mode, rf_model, rf_data, rf_layout = "crayon", rf_maps, rf_annotations, rf_neurons,
                                               rf_transfer, rf_out = "refined.ckpt", rf_history;
    std::optional<long> rf_subsample;
    int rf_responses = 2;
    auto* rf = app.add_subcommand("refine", "Refine a model with annotations");
    add_common(rf, rf_c);
    rf->add_option("--mode", rf_mode, "attention | pruning | all | erm");
    rf->add_option("--model", rf_model)->required();
    rf->add_option("--data", rf_data)->required();
    rf->add_option("--layout", rf_layout);
    rf->add_option("--maps", rf_maps, "Reference saliency store");
    rf->add_option("--annotations", rf_annotations, "RelevanceSets JSON or annotation JSONL");
    rf->add_option("--responses", rf_responses, "Responses per task when --annotations is JSONL");
    rf->add_option("--neuron-annotations", rf_neurons, "Neuron relevance JSON");
    rf->add_option("--subsample-n", rf_subsample, "Keep annotations for n random images");
    rf->add_option("--transfer-maps", rf_transfer, "Reference maps computed by another model");
    rf->add_option("--out", rf_out);
    rf->add_option("--history", rf_history);

    // ---- sweep
    Common sw_c;
    std::string sw_param = "alpha", sw_model, sw_data, sw_test, sw_layout = "crayon", sw_maps, sw_annotations,
                sw_out = "sweep.csv";
    std::vector<double> sw_values;
    auto* sw = app.add_subcommand("sweep", "Attention refinement over a grid of alpha or beta");
    add_common(sw, sw_c);
    sw->add_option("--param", sw_param, "alpha | beta")->check(CLI::IsMember({"alpha", "beta"}));
    sw->add_option("--values", sw_values)->required()->delimiter(',');
    sw->add_option("--model", sw_model)->required();
    sw->add_option("--data", sw_data)->required();
    sw->add_option("--test", sw_test)->required();
    sw->add_option("--layout", sw_layout);
    sw->add_option("--maps", sw_maps)->required();
    sw->add_option("--annotations", sw_annotations)->required();
    sw->add_option("--out", sw_out);

    // ---- eval
    std::string ev_model, ev_data, ev_layout = "crayon", ev_out = "report.json", ev_md, ev_name;
    bool ev_mixed = false;
    std::uint64_t ev_mixed_seed = 0;
    auto* ev = app.add_subcommand("eval", "Group accuracy (WGA, MGA) and optional background metrics");
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--layout", ev_layout);
    ev->add_flag("--mixed", ev_mixed, "Also report Mixed-Rand accuracy and BG-Gap");
    ev->add_option("--mixed-seed", ev_mixed_seed);
    ev->add_option("--name", ev_name, "Method name in the report");
    ev->add_option("--out", ev_out);
    ev->add_option("--markdown", ev_md);

    // ---- report
    std::vector<std::string> rp_inputs;
    std::string rp_out = "report.md", rp_json;
    auto* rp = app.add_subcommand("report", "Merge eval reports into one table");
    rp->add_option("inputs", rp_inputs, "Report JSON files")->required();
    rp->add_option("--out", rp_out, "Markdown output");
    rp->add_option("--json", rp_json, "Merged JSON output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sg) {
            SynthSpec spec = sg_c.config.empty() ? SynthSpec{} : synth_spec_from_json(read_text(resolve(sg_c.config)));
            if (sg_balanced) {
                SynthSpec b = SynthSpec::balanced(spec.num_classes, *sg_balanced, spec.seed);
                b.image_size = spec.image_size;
                b.id_prefix = spec.id_prefix;
                spec = b;
            }
            if (sg_c.seed) spec.seed = *sg_c.seed;
            const Dataset d = generate_synthetic(spec);
            const fs::path out = resolve(sg_out);
            save_dataset(d, out);
            write_text(out / "spec.json", synth_spec_to_json(spec));
            if (sg_mixed) {
                const MixedSets m = make_mixed_sets(d, spec.seed + 1);
                save_dataset(m.mixed_same, out / "mixed_same");
                save_dataset(m.mixed_rand, out / "mixed_rand");
            }
            std::cout << "wrote " << d.size() << " images to " << out << '\n';
        } else if (*tr) {
            TrainConfig cfg = tr_c.config.empty() ? TrainConfig{} : train_config_from_json(read_text(resolve(tr_c.config)));
            if (tr_c.seed) cfg.seed = *tr_c.seed;
            if (tr_epochs) cfg.epochs = *tr_epochs;
            const Dataset d = load_data(tr_data, tr_layout);
            std::vector<EpochStats> hist;
            ConvNet m = train_original(d, ArchSpec::preset(tr_arch, d.num_classes, d.image_size()), tr_model_seed, cfg,
                                       &hist);
            m.save(resolve(tr_out));
            if (!tr_history.empty()) write_history(hist, resolve(tr_history));
            std::cout << "model " << m.id() << " -> " << resolve(tr_out) << '\n';
        } else if (*sa) {
            const ConvNet m = ConvNet::load(resolve(sa_model));
            const Dataset d = load_data(sa_data, sa_layout);
            const auto maps = compute_reference_maps(m, d, parse_score_kind(sa_score));
            save_saliency_store(maps, resolve(sa_out));
            std::cout << maps.size() << " maps -> " << resolve(sa_out) << '\n';
        } else if (*pa) {
            const ConvNet m = ConvNet::load(resolve(pa_model));
            const auto patches = extract_patches(m, load_data(pa_data, pa_layout), pa_opts);
            save_patch_manifest(patches, resolve(pa_out));
            std::cout << patches.size() << " patches (" << unique_patches(patches).size() << " unique) -> "
                      << resolve(pa_out) << '\n';
        } else if (*ao) {
            if (ao_maps.empty() && ao_patches.empty()) throw std::invalid_argument("need --maps and/or --patches");
            const Dataset d = load_data(ao_data, "crayon");
            std::vector<AnnotationRecord> records;
            if (!ao_maps.empty()) {
                auto r = oracle_annotate_saliency(load_saliency_store(resolve(ao_maps)), d, ao_tau);
                const RelevanceSets sets = aggregate_saliency(r, 1);
                write_text(resolve(ao_rel), sets.to_json());
                std::cout << "relevant " << sets.relevant.size() << ", irrelevant " << sets.irrelevant.size() << '\n';
                records.insert(records.end(), r.begin(), r.end());
            }
            if (!ao_patches.empty()) {
                const auto patches = load_patch_manifest(resolve(ao_patches));
                auto r = oracle_annotate_patches(patches, d, ao_patch_tau);
                const auto rel = decide_relevance(patches, patch_answers(r));
                write_text(resolve(ao_neurons), neuron_relevance_to_json(rel));
                std::cout << "irrelevant neurons " << irrelevant_neurons(rel).size() << " of " << rel.size() << '\n';
                records.insert(records.end(), r.begin(), r.end());
            }
            write_annotations(records, resolve(ao_records));
        } else if (*agg) {
            const auto records = read_annotations(resolve(ag_store));
            const RelevanceSets sets = aggregate_saliency(records, ag_responses);
            write_text(resolve(ag_rel), sets.to_json());
            if (!ag_patches.empty()) {
                const auto rel = decide_relevance(load_patch_manifest(resolve(ag_patches)), patch_answers(records));
                write_text(resolve(ag_neurons), neuron_relevance_to_json(rel));
            }
            std::cout << "relevant " << sets.relevant.size() << ", irrelevant " << sets.irrelevant.size()
                      << ", excluded " << sets.excluded.size() << '\n';
        } else if (*se) {
            ServiceConfig cfg = se_c.config.empty() ? ServiceConfig{} : ServiceConfig::from_json(read_text(resolve(se_c.config)));
            if (se_oracle_mode) cfg.saliency_responses = 1;
            LoadOptions lo;
            lo.normalize = false;  // rendering needs [0,1] pixels
            const Dataset d = load_grouped_dataset(resolve(se_data), se_layout, lo);
            const auto maps = se_maps.empty() ? std::vector<SaliencyMap>{} : load_saliency_store(resolve(se_maps));
            const auto patches = se_patches.empty() ? std::vector<ConceptPatch>{} : load_patch_manifest(resolve(se_patches));
            auto tasks = make_saliency_tasks(maps, d, cfg);
            const auto ptasks = make_patch_tasks(patches, d, cfg);
            tasks.insert(tasks.end(), ptasks.begin(), ptasks.end());
            AnnotationStore store(resolve(se_store));
            AnnotationService service(tasks, store, cfg);
            ViewRenderer renderer(d, maps, patches);
            auto server = make_http_server(service, renderer, se_ui);
            g_server = server.get();
            std::signal(SIGINT, [](int) {
                g_stop = 1;
                if (g_server) g_server->stop();
            });
            std::cout << "serving " << tasks.size() << " tasks on http://" << se_host << ':' << se_port << '\n';
            if (!server->listen(se_host, se_port) && !g_stop) throw std::runtime_error("cannot listen on port");
        } else if (*rf) {
            RefinementConfig cfg = rf_c.config.empty() ? RefinementConfig{} : RefinementConfig::from_json(read_text(resolve(rf_c.config)));
            if (!rf_mode.empty()) cfg.mode = parse_refine_mode(rf_mode);
            if (rf_c.seed) cfg.seed = *rf_c.seed;
            if (rf_subsample) cfg.annotation_subsample_n = *rf_subsample;
            const ConvNet m = ConvNet::load(resolve(rf_model));
            const Dataset d = load_data(rf_data, rf_layout);
            auto need = [](const std::string& v, const char* flag) {
                if (v.empty()) throw std::invalid_argument(std::string("this mode needs ") + flag);
                return v;
            };
            RefineResult r;
            const bool attention = cfg.mode == RefineMode::attention || cfg.mode == RefineMode::all;
            std::vector<SaliencyMap> maps;
            RelevanceSets sets;
            if (attention) {
                sets = load_relevance(need(rf_annotations, "--annotations"), rf_responses);
                maps = load_saliency_store(resolve(rf_transfer.empty() ? need(rf_maps, "--maps") : rf_transfer));
            }
            std::vector<NeuronRelevance> neurons;
            if (cfg.mode == RefineMode::pruning || cfg.mode == RefineMode::all) {
                neurons = neuron_relevance_from_json(read_text(resolve(need(rf_neurons, "--neuron-annotations"))));
            }
            switch (cfg.mode) {
                case RefineMode::erm:
                    r = refine_erm(m, d, cfg);
                    break;
                case RefineMode::pruning:
                    r = refine_pruning(m, d, neurons, cfg);
                    break;
                case RefineMode::all:
                    r = refine_all(m, d, maps, sets, neurons, cfg);
                    break;
                default:
                    r = rf_transfer.empty() ? refine_attention(m, d, maps, sets, cfg)
                                            : refine_transfer(m, d, maps, sets, cfg);
            }
            r.model.save(resolve(rf_out));
            write_history(r.history, resolve(rf_history.empty() ? rf_out + ".history.jsonl" : rf_history));
            std::cout << to_string(cfg.mode) << " -> " << resolve(rf_out) << '\n';
        } else if (*sw) {
            RefinementConfig cfg = sw_c.config.empty() ? RefinementConfig{} : RefinementConfig::from_json(read_text(resolve(sw_c.config)));
            if (sw_c.seed) cfg.seed = *sw_c.seed;
            const auto rows = sweep(ConvNet::load(resolve(sw_model)), load_data(sw_data, sw_layout),
                                    load_data(sw_test, sw_layout), load_saliency_store(resolve(sw_maps)),
                                    load_relevance(sw_annotations, 2), cfg, sw_param, sw_values);
            write_text(resolve(sw_out), sweep_csv(rows));
            std::cout << sweep_csv(rows);
        } else if (*ev) {
            const ConvNet m = ConvNet::load(resolve(ev_model));
            const Dataset d = load_data(ev_data, ev_layout);
            ReportRow row{ev_name.empty() ? m.id() : ev_name, group_metrics(m, d), false, {}};
            if (ev_mixed) {
                const fs::path dir = resolve(ev_data);
                if (fs::exists(dir / "mixed_same") && fs::exists(dir / "mixed_rand")) {
                    row.background = background_metrics(m, load_grouped_dataset(dir / "mixed_same", ev_layout),
                                                        load_grouped_dataset(dir / "mixed_rand", ev_layout));
                } else {
                    const MixedSets ms = make_mixed_sets(d, ev_mixed_seed);
                    row.background = background_metrics(m, ms.mixed_same, ms.mixed_rand);
                }
                row.has_background = true;
            }
            write_text(resolve(ev_out), report_json({row}));
            const std::string md = report_markdown({row});
            if (!ev_md.empty()) write_text(resolve(ev_md), md);
            std::cout << md;
        } else if (*rp) {
            std::vector<ReportRow> rows;
            for (const auto& in : rp_inputs) {
                const auto r = report_rows_from_json(read_text(resolve(in)));
                rows.insert(rows.end(), r.begin(), r.end());
            }
            write_text(resolve(rp_out), report_markdown(rows));
            if (!rp_json.empty()) write_text(resolve(rp_json), report_json(rows));
            std::cout << report_markdown(rows);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
