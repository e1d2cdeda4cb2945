#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sahp/classic_hp.hpp"
#include "sahp/dataset_io.hpp"
#include "sahp/hawkes.hpp"
#include "sahp/infer.hpp"
#include "sahp/model.hpp"
#include "sahp/train.hpp"

namespace py = pybind11;
using namespace sahp;

namespace {

/// Checkpointable bundle of parameters and configuration.
struct Model {
    ModelParams params;
    SAHPConfig config;
};

std::vector<std::size_t> resolve_indices(const Dataset& dataset, const std::string& split) {
    if (split == "all" || !dataset.has_splits()) {
        std::vector<std::size_t> all(dataset.sequences.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    return dataset.indices_of(split_from_string(split));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Self-attentive Hawkes process toolkit";

    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");

    py::class_<Event>(m, "Event")
        .def(py::init<int, double>(), py::arg("type"), py::arg("time"))
        .def_readwrite("type", &Event::type)
        .def_readwrite("time", &Event::time)
        .def("__repr__", [](const Event& e) {
            return "Event(type=" + std::to_string(e.type) + ", time=" + std::to_string(e.time) + ")";
        });

    py::class_<Sequence>(m, "Sequence")
        .def(py::init([](std::vector<Event> events, double horizon) {
                 return Sequence{std::move(events), horizon};
             }),
             py::arg("events"), py::arg("horizon"))
        .def_readwrite("events", &Sequence::events)
        .def_readwrite("horizon", &Sequence::horizon)
        .def("__len__", [](const Sequence& s) { return s.size(); });

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<>())
        .def_readwrite("num_types", &Dataset::num_types)
        .def_readwrite("sequences", &Dataset::sequences)
        .def("split_names",
             [](const Dataset& d) {
                 std::vector<std::string> names;
                 names.reserve(d.split_labels.size());
                 for (Split s : d.split_labels) names.push_back(to_string(s));
                 return names;
             })
        .def("indices_of", [](const Dataset& d, const std::string& split) {
            return d.indices_of(split_from_string(split));
        });

    m.def("load_dataset", &load_dataset, py::arg("path"), py::arg("expected_types") = std::nullopt);
    m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
    m.def(
        "split_dataset",
        [](const Dataset& d, double train, double val, double test, std::uint64_t seed) {
            return split_dataset(d, {train, val, test}, seed);
        },
        py::arg("dataset"), py::arg("train"), py::arg("val"), py::arg("test"), py::arg("seed"));
    m.def("validate_sequence", [](const Sequence& seq, int num_types) {
        std::vector<std::pair<std::size_t, std::string>> out;
        for (const auto& v : validate_sequence(seq, num_types)) out.emplace_back(v.event_index, v.message);
        return out;
    });
    m.def("dataset_stats", [](const Dataset& d) {
        auto s = compute_stats(d);
        py::dict out;
        out["num_types"] = s.num_types;
        out["num_sequences"] = s.num_sequences;
        out["num_events"] = s.num_events;
        out["min_length"] = s.min_length;
        out["mean_length"] = s.mean_length;
        out["max_length"] = s.max_length;
        out["split_counts"] = s.split_counts;
        return out;
    });

    // --- simulator ---
    py::class_<HawkesSpec>(m, "HawkesSpec")
        .def_static("from_json", &hawkes_spec_from_json)
        .def("to_json", &hawkes_spec_to_json)
        .def_readonly("num_types", &HawkesSpec::num_types);
    m.def("benchmark_two_type_spec", &benchmark_two_type_spec);
    m.def("load_hawkes_spec", &load_hawkes_spec);
    m.def("save_hawkes_spec", &save_hawkes_spec);
    m.def("simulate_thinning", &simulate_thinning, py::arg("spec"), py::arg("horizon"), py::arg("seed"));
    m.def(
        "true_intensity",
        [](const HawkesSpec& spec, const std::vector<Event>& history, double t, int u) {
            return true_intensity(spec, history, t, u);
        },
        py::arg("spec"), py::arg("history"), py::arg("t"), py::arg("type"));
    m.def(
        "intensity_trace",
        [](const HawkesSpec& spec, const Sequence& seq, const std::vector<double>& grid) {
            return intensity_trace(spec, seq, grid);
        },
        py::arg("spec"), py::arg("sequence"), py::arg("grid"));
    m.def(
        "true_windowed_nll",
        [](const HawkesSpec& spec, const Sequence& seq) { return true_windowed_nll(spec, seq); },
        py::arg("spec"), py::arg("sequence"));

    // --- classic Hawkes baseline ---
    py::class_<HawkesParams>(m, "HawkesParams")
        .def(py::init([](std::vector<double> base, std::vector<std::vector<double>> excitation,
                         std::vector<std::vector<double>> decay) {
                 HawkesParams p{std::move(base), std::move(excitation), std::move(decay)};
                 p.validate();
                 return p;
             }),
             py::arg("base"), py::arg("excitation"), py::arg("decay"))
        .def_readwrite("base", &HawkesParams::base)
        .def_readwrite("excitation", &HawkesParams::excitation)
        .def_readwrite("decay", &HawkesParams::decay)
        .def("to_json", &hp_params_to_json)
        .def_static("from_json", &hp_params_from_json);
    m.def(
        "hp_intensity",
        [](const HawkesParams& p, const std::vector<Event>& history, double t, int u) {
            return hp_intensity(p, history, t, u);
        },
        py::arg("params"), py::arg("history"), py::arg("t"), py::arg("type"));
    m.def("hp_compensator", &hp_compensator);
    m.def("hp_loglik", &hp_loglik);
    m.def("hp_windowed_nll", &hp_windowed_nll);
    m.def(
        "hp_fit",
        [](const Dataset& dataset, std::optional<HawkesParams> init, int max_iterations, double tol) {
            HpFitOptions opt;
            opt.max_iterations = max_iterations;
            opt.relative_tolerance = tol;
            HawkesParams start =
                init ? *init : hp_default_init(dataset, dataset.indices_of(Split::train));
            HpFitResult fit = hp_fit(dataset, start, opt);
            py::dict out;
            out["params"] = fit.params;
            out["final_nll"] = fit.final_nll;
            out["iterations"] = fit.iterations;
            out["converged"] = fit.converged;
            return out;
        },
        py::arg("dataset"), py::arg("init") = std::nullopt, py::arg("max_iterations") = 1000,
        py::arg("tol") = 1e-6);

    // --- self-attentive model ---
    py::class_<SAHPConfig>(m, "SAHPConfig")
        .def(py::init<>())
        .def_readwrite("num_types", &SAHPConfig::num_types)
        .def_readwrite("model_dim", &SAHPConfig::model_dim)
        .def_readwrite("num_heads", &SAHPConfig::num_heads)
        .def_readwrite("num_layers", &SAHPConfig::num_layers)
        .def_readwrite("dropout_rate", &SAHPConfig::dropout_rate)
        .def_readwrite("similarity_scaling", &SAHPConfig::similarity_scaling)
        .def_readwrite("time_rescale", &SAHPConfig::time_rescale)
        .def_property(
            "encoding_mode", [](const SAHPConfig& c) { return to_string(c.encoding_mode); },
            [](SAHPConfig& c, const std::string& s) { c.encoding_mode = encoding_mode_from_string(s); });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("warmup_steps", &TrainConfig::warmup_steps)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("early_stop_delta", &TrainConfig::early_stop_delta)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("mc_samples", &TrainConfig::mc_samples)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("workers", &TrainConfig::workers);

    py::class_<IntensityState>(m, "IntensityState")
        .def_readonly("mu", &IntensityState::mu)
        .def_readonly("eta", &IntensityState::eta)
        .def_readonly("gamma", &IntensityState::gamma)
        .def_readonly("interval_start", &IntensityState::interval_start);
    m.def("intensity_at", &intensity_at, py::arg("state"), py::arg("t"));

    py::class_<Model>(m, "Model")
        .def(py::init([](const SAHPConfig& config, std::uint64_t seed) {
                 return Model{init_params(config, seed), config};
             }),
             py::arg("config"), py::arg("seed") = 0)
        .def_readonly("config", &Model::config)
        .def("save", [](const Model& model, const std::filesystem::path& path) {
            save_checkpoint(model.params, model.config, path);
        })
        .def_static("load",
                    [](const std::filesystem::path& path) {
                        auto [params, config] = load_checkpoint(path);
                        return Model{std::move(params), config};
                    })
        .def("intensity_states",
             [](const Model& model, const std::vector<Event>& prefix) {
                 Sequence scaled;
                 scaled.events = prefix;
                 scaled.horizon = prefix.empty() ? 0.0 : prefix.back().time;
                 scaled = scale_sequence_time(scaled, model.config.time_rescale);
                 return all_type_intensity_states(model.params, model.config, scaled.events);
             },
             "Per-type interval states on the model's (rescaled) time axis")
        .def("sequence_nll",
             [](const Model& model, const Sequence& seq, int n_samples, std::uint64_t seed) {
                 RngStream rng(seed);
                 return sequence_nll(model.params, model.config, seq, n_samples, rng);
             },
             py::arg("sequence"), py::arg("n_samples") = 10, py::arg("seed") = 0)
        .def("predict_next",
             [](const Model& model, const std::vector<Event>& prefix) {
                 PredictionResult pred = predict_next(model.params, model.config, prefix);
                 py::dict out;
                 out["predicted_time"] = pred.predicted_time;
                 out["predicted_type"] = pred.predicted_type;
                 out["type_scores"] = pred.type_scores;
                 out["captured_mass"] = pred.captured_mass;
                 return out;
             },
             py::arg("prefix"))
        .def("next_event_density",
             [](const Model& model, const std::vector<Event>& prefix, double t) {
                 return next_event_density(model.params, model.config, prefix, t);
             })
        .def("attention_map",
             [](const Model& model, const Dataset& dataset, const std::string& split) {
                 auto result = attention_map(model.params, model.config, dataset,
                                             resolve_indices(dataset, split));
                 return py::make_tuple(result.map, result.uniform_rows);
             },
             py::arg("dataset"), py::arg("split") = "all")
        .def("evaluate",
             [](const Model& model, const Dataset& dataset, const std::string& split, int n_mc,
                std::uint64_t seed, std::optional<HawkesSpec> truth, int workers) {
                 EvalOptions options;
                 options.n_mc = n_mc;
                 options.seed = seed;
                 options.workers = workers;
                 EvalReport report = evaluate(model.params, model.config, dataset,
                                              resolve_indices(dataset, split), options,
                                              truth ? &*truth : nullptr);
                 py::dict out;
                 out["nll_per_event"] = report.nll_per_event;
                 out["macro_f1"] = report.macro_f1;
                 out["rmse_scaled"] = report.rmse_scaled;
                 out["counted_events"] = report.counted_events;
                 out["predictions"] = report.predictions;
                 out["skipped_zero_intervals"] = report.skipped_zero_intervals;
                 out["qq_pairs"] = report.qq_pairs;
                 out["attention_map"] = report.attention_map;
                 out["attention_uniform_rows"] = report.attention_uniform_rows;
                 return out;
             },
             py::arg("dataset"), py::arg("split") = "test", py::arg("n_mc") = 10, py::arg("seed") = 0,
             py::arg("truth") = std::nullopt, py::arg("workers") = 1);

    m.def(
        "train",
        [](const Model& init, const Dataset& dataset, const TrainConfig& config) {
            TrainResult result = train(init.config, init.params, dataset, config);
            py::list history;
            for (const EpochLog& log : result.history) {
                py::dict row;
                row["epoch"] = log.epoch;
                row["step"] = log.step;
                row["train_nll_per_event"] = log.train_nll_per_event;
                row["val_nll_per_event"] = log.val_nll_per_event;
                row["learning_rate"] = log.learning_rate;
                history.append(row);
            }
            py::dict out;
            out["model"] = Model{std::move(result.params), init.config};
            out["history"] = history;
            out["best_val_nll_per_event"] = result.best_val_nll_per_event;
            out["best_epoch"] = result.best_epoch;
            out["early_stopped"] = result.early_stopped;
            return out;
        },
        py::arg("model"), py::arg("dataset"), py::arg("config"));

    m.def(
        "qq_data",
        [](const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& p) {
            return qq_data(a, b, p);
        },
        py::arg("true_values"), py::arg("estimated_values"), py::arg("percentiles"));
}
