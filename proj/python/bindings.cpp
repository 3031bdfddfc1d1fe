#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "crayon/refine.hpp"

namespace py = pybind11;
using namespace crayon;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Dims dims(a.shape(), a.shape() + a.ndim());
    return Tensor(dims, std::vector<double>(a.data(), a.data() + a.size()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "crayon core bindings";

    m.def("loss_rel", [](py::array_t<double> t, py::array_t<double> r) { return loss_rel(from_numpy(t), from_numpy(r)); },
          py::arg("trainable"), py::arg("reference"));
    m.def("loss_irrel", [](py::array_t<double> t, py::array_t<double> r) { return loss_irrel(from_numpy(t), from_numpy(r)); },
          py::arg("trainable"), py::arg("reference"));
    m.def("loss_pred", &loss_pred, py::arg("probs"), py::arg("one_hot"));

    py::class_<SynthSpec>(m, "SynthSpec")
        .def(py::init<>())
        .def_readwrite("num_classes", &SynthSpec::num_classes)
        .def_readwrite("rho", &SynthSpec::rho)
        .def_readwrite("per_class", &SynthSpec::per_class)
        .def_readwrite("group_counts", &SynthSpec::group_counts)
        .def_readwrite("image_size", &SynthSpec::image_size)
        .def_readwrite("seed", &SynthSpec::seed)
        .def_readwrite("id_prefix", &SynthSpec::id_prefix)
        .def("counts", &SynthSpec::counts)
        .def_static("balanced", &SynthSpec::balanced, py::arg("num_classes"), py::arg("per_group"), py::arg("seed"))
        .def("to_json", [](const SynthSpec& s) { return synth_spec_to_json(s); })
        .def_static("from_json", &synth_spec_from_json);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("name", &Dataset::name)
        .def_readonly("num_classes", &Dataset::num_classes)
        .def_readonly("class_names", &Dataset::class_names)
        .def("__len__", &Dataset::size)
        .def("image_size", &Dataset::image_size)
        .def("labels", py::overload_cast<>(&Dataset::labels, py::const_))
        .def("image_ids", [](const Dataset& d) {
            std::vector<std::string> out;
            for (const auto& e : d.examples) out.push_back(e.image_id);
            return out;
        })
        .def("spurious_labels", [](const Dataset& d) {
            std::vector<int> out;
            for (const auto& e : d.examples) out.push_back(e.spurious_label);
            return out;
        })
        .def("images", [](const Dataset& d) { return to_numpy(d.all_images()); })
        .def("mask", [](const Dataset& d, std::size_t i) {
            const auto& e = d.examples.at(i);
            if (!e.mask) throw std::invalid_argument("example has no mask");
            py::array_t<std::uint8_t> out({e.mask->height, e.mask->width});
            std::copy(e.mask->bits.begin(), e.mask->bits.end(), out.mutable_data());
            return out;
        })
        .def("group_histogram", [](const Dataset& d) {
            std::map<std::pair<int, int>, int> out;
            for (const auto& [g, n] : d.group_histogram()) out[{g.class_label, g.spurious_label}] = n;
            return out;
        })
        .def("hash", [](const Dataset& d) { return dataset_hash(d); });

    m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
    m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("dir"));
    m.def("load_dataset", [](const std::filesystem::path& dir, const std::string& layout) {
        return load_grouped_dataset(dir, layout);
    }, py::arg("dir"), py::arg("layout") = "crayon");
    m.def("make_mixed_sets", [](const Dataset& d, std::uint64_t seed) {
        auto s = make_mixed_sets(d, seed);
        return py::make_tuple(std::move(s.mixed_same), std::move(s.mixed_rand));
    }, py::arg("dataset"), py::arg("seed") = 0);

    py::class_<ConvNet>(m, "ConvNet")
        .def(py::init([](const std::string& preset, int num_classes, int image_size, std::uint64_t seed) {
                 return ConvNet(ArchSpec::preset(preset, num_classes, image_size), seed);
             }),
             py::arg("preset") = "convnet-a", py::arg("num_classes") = 2, py::arg("image_size") = 32,
             py::arg("seed") = 0)
        .def_property_readonly("id", &ConvNet::id)
        .def("logits", [](const ConvNet& n, py::array_t<double> x) { return to_numpy(n.logits(from_numpy(x))); })
        .def("features", [](const ConvNet& n, py::array_t<double> x) { return to_numpy(n.feature_values(from_numpy(x))); })
        .def("parameter_count", &ConvNet::parameter_count)
        .def("pruned_channels", &ConvNet::pruned_channels)
        .def("body_hash", &ConvNet::body_hash)
        .def("head_hash", &ConvNet::head_hash)
        .def("save", &ConvNet::save)
        .def_static("load", &ConvNet::load);

    m.def("train_original", [](const Dataset& d, const std::string& preset, std::uint64_t model_seed, int epochs,
                               std::uint64_t seed) {
        TrainConfig c;
        c.epochs = epochs;
        c.seed = seed;
        return train_original(d, ArchSpec::preset(preset, d.num_classes, d.image_size()), model_seed, c);
    }, py::arg("dataset"), py::arg("preset") = "convnet-a", py::arg("model_seed") = 0, py::arg("epochs") = 10,
          py::arg("seed") = 0);

    m.def("saliency_maps", [](const ConvNet& n, const Dataset& d) {
        const auto maps = compute_reference_maps(n, d);
        py::dict out;
        for (const auto& s : maps) out[py::str(s.image_id)] = to_numpy(s.values);
        return out;
    }, py::arg("model"), py::arg("dataset"));

    m.def("oracle_annotate", [](py::array_t<double> map, py::array_t<double> mask, double tau) {
        return to_string(oracle_annotate(from_numpy(map), from_numpy(mask), tau));
    }, py::arg("map"), py::arg("mask"), py::arg("tau") = 0.6);

    m.def("aggregate_pair", [](std::optional<std::string> a, std::optional<std::string> b) {
        auto parse = [](const std::optional<std::string>& s) -> std::optional<Answer> {
            return s ? std::optional(parse_answer(*s)) : std::nullopt;
        };
        return to_string(aggregate_pair(parse(a), parse(b)));
    }, py::arg("first"), py::arg("second"));

    m.def("group_metrics", [](const std::vector<int>& predictions, const Dataset& d) {
        const auto r = group_metrics(predictions, d);
        return py::dict(py::arg("wga") = r.wga, py::arg("mga") = r.mga, py::arg("average_accuracy") = r.average_accuracy);
    }, py::arg("predictions"), py::arg("dataset"));
    m.def("model_group_metrics", [](const ConvNet& n, const Dataset& d) {
        const auto r = group_metrics(n, d);
        return py::dict(py::arg("wga") = r.wga, py::arg("mga") = r.mga, py::arg("average_accuracy") = r.average_accuracy);
    }, py::arg("model"), py::arg("dataset"));
    m.def("bg_gap", [](double same, double rand) { return background_metrics(same, rand).bg_gap; });

    // Oracle-annotated refinement in one call; config is RefinementConfig JSON.
    m.def("refine_with_oracle", [](const ConvNet& n, const Dataset& d, const std::string& config_json, double tau) {
        const RefinementConfig c = RefinementConfig::from_json(config_json);
        const auto maps = compute_reference_maps(n, d, c.score);
        const auto sets = aggregate_saliency(oracle_annotate_saliency(maps, d, tau), 1);
        switch (c.mode) {
            case RefineMode::erm:
                return refine_erm(n, d, c).model;
            case RefineMode::pruning:
            case RefineMode::all: {
                const auto patches = extract_patches(n, d);
                const auto rel = decide_relevance(patches, patch_answers(oracle_annotate_patches(patches, d, 0.5)));
                return c.mode == RefineMode::pruning ? refine_pruning(n, d, rel, c).model
                                                     : refine_all(n, d, maps, sets, rel, c).model;
            }
            default:
                return refine_attention(n, d, maps, sets, c).model;
        }
    }, py::arg("model"), py::arg("dataset"), py::arg("config_json") = "{}", py::arg("tau") = 0.6,
          py::call_guard<py::gil_scoped_release>());
}
