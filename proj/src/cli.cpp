#include "sahp/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sahp/classic_hp.hpp"
#include "sahp/dataset_io.hpp"
#include "sahp/hawkes.hpp"
#include "sahp/infer.hpp"
#include "sahp/model.hpp"
#include "sahp/train.hpp"

namespace sahp::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

/// Values loaded from --config; applied to bound variables before the option
/// definitions capture their defaults, so command-line flags still win.
class ConfigDefaults {
public:
    void load(const std::vector<std::string>& args) {
        for (std::size_t i = 0; i + 1 < args.size(); ++i) {
            if (args[i] == "--config") {
                std::ifstream in(args[i + 1], std::ios::binary);
                if (!in) throw DataError("cannot open config file: " + args[i + 1]);
                std::ostringstream buf;
                buf << in.rdbuf();
                try {
                    values_ = json::parse(buf.str());
                } catch (const json::parse_error& e) {
                    throw DataError("config file parse error: " + std::string(e.what()));
                }
                path_ = args[i + 1];
                return;
            }
        }
    }

    template <typename T>
    void apply(const std::string& key, T& var) const {
        if (values_.is_object() && values_.contains(key)) var = values_.at(key).get<T>();
    }

    const std::string& path() const { return path_; }

private:
    json values_;
    std::string path_;
};

void write_resolved_config(const fs::path& path, const json& resolved) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write resolved config: " + path.string());
    out << resolved.dump(2) << "\n";
}

fs::path sidecar_config_path(const fs::path& output) {
    fs::path p = output;
    p += ".config.json";
    return p;
}

std::vector<std::size_t> select_split(const Dataset& dataset, const std::string& name) {
    if (name == "all") {
        std::vector<std::size_t> all(dataset.sequences.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    if (!dataset.has_splits()) {
        throw DataError("dataset has no split labels; use split \"all\" or label the data first");
    }
    auto idx = dataset.indices_of(split_from_string(name));
    if (idx.empty()) throw DataError("split \"" + name + "\" is empty");
    return idx;
}

std::vector<double> default_percentiles() {
    std::vector<double> p;
    for (int i = 1; i <= 99; ++i) p.push_back(static_cast<double>(i));
    return p;
}

/// Classic-HP intensities at the event times t_2..t_L (left limits), pooled
/// per type; the estimated sample for the baseline's QQ column.
std::vector<std::vector<double>> hp_intensity_samples(const HawkesParams& params, const Dataset& dataset,
                                                      const std::vector<std::size_t>& indices) {
    const auto u_count = static_cast<std::size_t>(params.num_types());
    std::vector<std::vector<double>> out(u_count);
    for (std::size_t idx : indices) {
        const Sequence& seq = dataset.sequences[idx];
        for (std::size_t i = 1; i < seq.events.size(); ++i) {
            std::span<const Event> history(seq.events.data(), i);
            for (std::size_t u = 0; u < u_count; ++u) {
                out[u].push_back(hp_intensity(params, history, seq.events[i].time, static_cast<int>(u)));
            }
        }
    }
    return out;
}

double qq_mad(const std::vector<std::pair<double, double>>& pairs, const std::vector<double>& percentiles,
              double lo, double hi) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (percentiles[i] >= lo && percentiles[i] <= hi) {
            total += std::abs(pairs[i].second - pairs[i].first);
            ++count;
        }
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

struct TrainFlags {
    std::string data;
    std::string out;
    std::string history = "";
    std::string init_checkpoint = "";
    int model_dim = 32;
    int num_heads = 2;
    int num_layers = 2;
    double dropout = 0.1;
    std::string encoding = "time_shifted";
    bool similarity_scaling = false;
    double lr = 1e-3;
    int warmup_steps = 200;
    int batch_size = 16;
    int max_epochs = 60;
    double early_stop_delta = 1e-3;
    int patience = 5;
    int mc_samples = 10;
    std::uint64_t seed = 1;
    int workers = 1;
    double time_rescale = 0.0;      // 0 = derive from the training split
    double model_rate_target = 2.0; // per-type event rate on the model axis
};

/// Auto time rescale: bring the per-type event rate on the model axis to the
/// target, where the softplus intensity head is responsive.
double resolve_time_rescale(const Dataset& dataset, double requested, double per_type_target) {
    if (requested > 0.0) return requested;
    auto idx = dataset.indices_of(Split::train);
    if (idx.empty()) {
        idx.resize(dataset.sequences.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    double events = 0.0, span = 0.0;
    for (std::size_t i : idx) {
        events += static_cast<double>(dataset.sequences[i].size());
        span += dataset.sequences[i].horizon;
    }
    if (!(span > 0.0) || !(events > 0.0)) return 1.0;
    const double rate = events / span;
    return rate / (per_type_target * dataset.num_types);
}

json train_flags_json(const TrainFlags& f) {
    return json{{"data", f.data},
                {"out", f.out},
                {"history", f.history},
                {"init-checkpoint", f.init_checkpoint},
                {"model-dim", f.model_dim},
                {"num-heads", f.num_heads},
                {"num-layers", f.num_layers},
                {"dropout", f.dropout},
                {"encoding", f.encoding},
                {"similarity-scaling", f.similarity_scaling},
                {"lr", f.lr},
                {"warmup-steps", f.warmup_steps},
                {"batch-size", f.batch_size},
                {"max-epochs", f.max_epochs},
                {"early-stop-delta", f.early_stop_delta},
                {"patience", f.patience},
                {"mc-samples", f.mc_samples},
                {"seed", f.seed},
                {"workers", f.workers},
                {"time-rescale", f.time_rescale},
                {"model-rate-target", f.model_rate_target}};
}

std::pair<SAHPConfig, TrainConfig> configs_from_flags(const TrainFlags& f, int num_types) {
    SAHPConfig mc;
    mc.num_types = num_types;
    mc.model_dim = f.model_dim;
    mc.num_heads = f.num_heads;
    mc.num_layers = f.num_layers;
    mc.dropout_rate = f.dropout;
    mc.encoding_mode = encoding_mode_from_string(f.encoding);
    mc.similarity_scaling = f.similarity_scaling;
    TrainConfig tc;
    tc.learning_rate = f.lr;
    tc.warmup_steps = f.warmup_steps;
    tc.batch_size = f.batch_size;
    tc.max_epochs = f.max_epochs;
    tc.early_stop_delta = f.early_stop_delta;
    tc.patience = f.patience;
    tc.mc_samples = f.mc_samples;
    tc.seed = f.seed;
    tc.workers = f.workers;
    return {mc, tc};
}

/// Parses; returns -1 to continue or an exit code to return immediately.
int parse_with(CLI::App& app, const std::vector<std::string>& args) {
    try {
        // CLI11 wants reversed argv without the program name.
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        return -1;
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "argument error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
}

void apply_train_defaults(const ConfigDefaults& defaults, TrainFlags& f) {
    defaults.apply("model-dim", f.model_dim);
    defaults.apply("num-heads", f.num_heads);
    defaults.apply("num-layers", f.num_layers);
    defaults.apply("dropout", f.dropout);
    defaults.apply("encoding", f.encoding);
    defaults.apply("similarity-scaling", f.similarity_scaling);
    defaults.apply("lr", f.lr);
    defaults.apply("warmup-steps", f.warmup_steps);
    defaults.apply("batch-size", f.batch_size);
    defaults.apply("max-epochs", f.max_epochs);
    defaults.apply("early-stop-delta", f.early_stop_delta);
    defaults.apply("patience", f.patience);
    defaults.apply("mc-samples", f.mc_samples);
    defaults.apply("time-rescale", f.time_rescale);
    defaults.apply("model-rate-target", f.model_rate_target);
}

void add_train_options(CLI::App& app, TrainFlags& f) {
    app.add_option("--model-dim", f.model_dim);
    app.add_option("--num-heads", f.num_heads);
    app.add_option("--num-layers", f.num_layers);
    app.add_option("--dropout", f.dropout);
    app.add_option("--encoding", f.encoding)->check(CLI::IsMember({"time_shifted", "conventional"}));
    app.add_flag("--similarity-scaling", f.similarity_scaling);
    app.add_option("--lr", f.lr);
    app.add_option("--warmup-steps", f.warmup_steps);
    app.add_option("--batch-size", f.batch_size);
    app.add_option("--max-epochs", f.max_epochs);
    app.add_option("--early-stop-delta", f.early_stop_delta);
    app.add_option("--patience", f.patience);
    app.add_option("--mc-samples", f.mc_samples);
    app.add_option("--time-rescale", f.time_rescale,
                   "model-axis time factor; 0 derives it from the training split");
    app.add_option("--model-rate-target", f.model_rate_target);
}

int run_simulate(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string spec_path, out_path, config_path, split_spec;
    double horizon = 50.0;
    int n = 100;
    std::uint64_t seed = 1;
    std::uint64_t split_seed = 0;
    bool benchmark = false;
    defaults.apply("spec", spec_path);
    defaults.apply("out", out_path);
    defaults.apply("horizon", horizon);
    defaults.apply("n", n);
    defaults.apply("seed", seed);
    defaults.apply("benchmark", benchmark);
    defaults.apply("split", split_spec);
    defaults.apply("split-seed", split_seed);

    CLI::App app{"simulate ground-truth multivariate Hawkes sequences by thinning"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--spec", spec_path, "Hawkes spec JSON (kernel matrix + base rates)");
    app.add_flag("--benchmark", benchmark, "use the built-in two-type benchmark process");
    app.add_option("--horizon", horizon, "observation horizon T")->check(CLI::PositiveNumber);
    app.add_option("--n", n, "number of sequences")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "root seed");
    app.add_option("--split", split_spec, "optional train,val,test fractions, e.g. 0.8,0.1,0.1");
    app.add_option("--split-seed", split_seed, "seed for the split shuffle (defaults to --seed)");
    app.add_option("--out", out_path, "output dataset JSONL")->required();
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    if (spec_path.empty() && !benchmark) throw DataError("simulate needs --spec or --benchmark");
    HawkesSpec spec = spec_path.empty() ? benchmark_two_type_spec() : load_hawkes_spec(spec_path);
    Dataset dataset;
    dataset.num_types = spec.num_types;
    dataset.sequences.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::uint64_t seq_seed = splitmix64(hash_bytes("simulate", seed) + static_cast<std::uint64_t>(i));
        dataset.sequences.push_back(simulate_thinning(spec, horizon, seq_seed));
    }
    if (!split_spec.empty()) {
        std::array<double, 3> fractions{};
        if (std::sscanf(split_spec.c_str(), "%lf,%lf,%lf", &fractions[0], &fractions[1], &fractions[2]) != 3) {
            throw DataError("--split expects three comma-separated fractions");
        }
        dataset = split_dataset(dataset, fractions, split_seed ? split_seed : seed);
    }
    save_dataset(dataset, out_path);
    write_resolved_config(sidecar_config_path(out_path),
                          json{{"command", "simulate"},
                               {"spec", spec_path},
                               {"benchmark", benchmark},
                               {"horizon", horizon},
                               {"n", n},
                               {"seed", seed},
                               {"split", split_spec},
                               {"split-seed", split_seed},
                               {"out", out_path}});
    return kExitOk;
}

int run_fit_hp(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string data_path, out_path, trace_path, init_path, config_path;
    int max_iters = 1000;
    double tol = 1e-6;
    defaults.apply("data", data_path);
    defaults.apply("out", out_path);
    defaults.apply("trace", trace_path);
    defaults.apply("init", init_path);
    defaults.apply("max-iters", max_iters);
    defaults.apply("tol", tol);

    CLI::App app{"fit the exponential-kernel Hawkes baseline by maximum likelihood"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--data", data_path, "dataset JSONL")->required();
    app.add_option("--out", out_path, "fitted parameters JSON")->required();
    app.add_option("--trace", trace_path, "optional fit diagnostics CSV (iteration, nll)");
    app.add_option("--init", init_path, "optional starting parameters JSON");
    app.add_option("--max-iters", max_iters)->check(CLI::PositiveNumber);
    app.add_option("--tol", tol)->check(CLI::PositiveNumber);
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    Dataset dataset = load_dataset(data_path);
    auto train_idx = dataset.indices_of(Split::train);
    HawkesParams init =
        init_path.empty() ? hp_default_init(dataset, train_idx) : load_hp_params(init_path);
    HpFitOptions opt;
    opt.max_iterations = max_iters;
    opt.relative_tolerance = tol;
    HpFitResult fit = hp_fit(dataset, init, opt);
    save_hp_params(fit.params, out_path);
    if (!trace_path.empty()) {
        std::ofstream trace(trace_path, std::ios::binary | std::ios::trunc);
        trace.precision(17);
        trace << "iteration,nll\n";
        for (const auto& [it, nll] : fit.trace) trace << it << ',' << nll << "\n";
    }
    write_resolved_config(sidecar_config_path(out_path), json{{"command", "fit-hp"},
                                                              {"data", data_path},
                                                              {"out", out_path},
                                                              {"trace", trace_path},
                                                              {"init", init_path},
                                                              {"max-iters", max_iters},
                                                              {"tol", tol}});
    std::cerr << "fit-hp: nll " << fit.final_nll << " after " << fit.iterations << " iterations"
              << (fit.converged ? "" : " (not converged)") << "\n";
    return kExitOk;
}

int run_train(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    TrainFlags f;
    std::string config_path;
    defaults.apply("data", f.data);
    defaults.apply("out", f.out);
    defaults.apply("history", f.history);
    defaults.apply("init-checkpoint", f.init_checkpoint);
    defaults.apply("seed", f.seed);
    defaults.apply("workers", f.workers);
    apply_train_defaults(defaults, f);

    CLI::App app{"train the self-attentive model by maximum likelihood"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--data", f.data, "dataset JSONL with split labels")->required();
    app.add_option("--out", f.out, "output checkpoint JSON")->required();
    app.add_option("--history", f.history, "training history CSV");
    app.add_option("--init-checkpoint", f.init_checkpoint, "resume/start from an existing checkpoint");
    app.add_option("--seed", f.seed);
    app.add_option("--workers", f.workers);
    add_train_options(app, f);
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    Dataset dataset = load_dataset(f.data);
    auto [model_config, train_config] = configs_from_flags(f, dataset.num_types);
    model_config.time_rescale = resolve_time_rescale(dataset, f.time_rescale, f.model_rate_target);
    ModelParams init;
    if (f.init_checkpoint.empty()) {
        init = init_params(model_config, train_config.seed);
    } else {
        auto [params, config] = load_checkpoint(f.init_checkpoint);
        model_config = config;
        init = std::move(params);
    }
    TrainResult result = train(model_config, init, dataset, train_config);
    save_checkpoint(result.params, model_config, f.out);
    if (!f.history.empty()) write_history_csv(result.history, f.history);
    write_resolved_config(sidecar_config_path(f.out),
                          json{{"command", "train"}, {"flags", train_flags_json(f)}});
    std::cerr << "train: best val nll/event " << result.best_val_nll_per_event << " at epoch "
              << result.best_epoch << (result.early_stopped ? " (early stop)" : "") << "\n";
    return kExitOk;
}

int run_evaluate(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string model_path, data_path, out_path, split = "test", truth_path, qq_csv, attn_csv, config_path;
    int n_mc = 10;
    std::uint64_t seed = 1;
    int workers = 1;
    defaults.apply("model", model_path);
    defaults.apply("data", data_path);
    defaults.apply("out", out_path);
    defaults.apply("split", split);
    defaults.apply("true-spec", truth_path);
    defaults.apply("qq-csv", qq_csv);
    defaults.apply("attn-csv", attn_csv);
    defaults.apply("n-mc", n_mc);
    defaults.apply("seed", seed);
    defaults.apply("workers", workers);

    CLI::App app{"evaluate a checkpoint: NLL per event, macro-F1, scaled RMSE, QQ data, attention map"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--model", model_path, "checkpoint JSON")->required();
    app.add_option("--data", data_path, "dataset JSONL")->required();
    app.add_option("--split", split)->check(CLI::IsMember({"train", "val", "test", "all"}));
    app.add_option("--true-spec", truth_path, "ground-truth Hawkes spec for QQ quantiles");
    app.add_option("--out", out_path, "evaluation report JSON")->required();
    app.add_option("--qq-csv", qq_csv, "QQ pairs CSV");
    app.add_option("--attn-csv", attn_csv, "attention map CSV");
    app.add_option("--n-mc", n_mc)->check(CLI::PositiveNumber);
    app.add_option("--seed", seed);
    app.add_option("--workers", workers)->check(CLI::PositiveNumber);
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    auto [params, model_config] = load_checkpoint(model_path);
    Dataset dataset = load_dataset(data_path, model_config.num_types);
    auto indices = select_split(dataset, split);
    EvalOptions options;
    options.n_mc = n_mc;
    options.seed = seed;
    options.workers = workers;
    std::optional<HawkesSpec> truth;
    if (!truth_path.empty()) truth = load_hawkes_spec(truth_path);
    EvalReport report = evaluate(params, model_config, dataset, indices, options, truth ? &*truth : nullptr);
    save_eval_report(report, out_path);
    if (!qq_csv.empty()) write_qq_csv(report, default_percentiles(), qq_csv);
    if (!attn_csv.empty()) write_attention_csv(report.attention_map, attn_csv);
    write_resolved_config(sidecar_config_path(out_path), json{{"command", "evaluate"},
                                                              {"model", model_path},
                                                              {"data", data_path},
                                                              {"split", split},
                                                              {"true-spec", truth_path},
                                                              {"out", out_path},
                                                              {"qq-csv", qq_csv},
                                                              {"attn-csv", attn_csv},
                                                              {"n-mc", n_mc},
                                                              {"seed", seed},
                                                              {"workers", workers}});
    return kExitOk;
}

int run_predict(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string model_path, data_path, out_path, config_path;
    std::size_t seq_index = 0;
    int prefix_len = -1;
    defaults.apply("model", model_path);
    defaults.apply("data", data_path);
    defaults.apply("out", out_path);
    defaults.apply("seq", seq_index);
    defaults.apply("prefix-len", prefix_len);

    CLI::App app{"predict the next event time and type after a prefix"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--model", model_path)->required();
    app.add_option("--data", data_path)->required();
    app.add_option("--seq", seq_index, "sequence index in the dataset");
    app.add_option("--prefix-len", prefix_len, "prefix length (default: the whole sequence)");
    app.add_option("--out", out_path, "prediction JSON")->required();
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    auto [params, model_config] = load_checkpoint(model_path);
    Dataset dataset = load_dataset(data_path, model_config.num_types);
    if (seq_index >= dataset.sequences.size()) throw DataError("predict: sequence index out of range");
    const Sequence& seq = dataset.sequences[seq_index];
    std::size_t len = prefix_len < 0 ? seq.events.size() : static_cast<std::size_t>(prefix_len);
    if (len == 0 || len > seq.events.size()) throw DataError("predict: invalid prefix length");
    std::span<const Event> prefix(seq.events.data(), len);
    PredictionResult pred = predict_next(params, model_config, prefix);
    json j{{"predicted_time", pred.predicted_time},
           {"predicted_type", pred.predicted_type},
           {"type_scores", pred.type_scores},
           {"captured_mass", pred.captured_mass}};
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write prediction: " + out_path);
    out << j.dump(2) << "\n";
    write_resolved_config(sidecar_config_path(out_path), json{{"command", "predict"},
                                                              {"model", model_path},
                                                              {"data", data_path},
                                                              {"seq", seq_index},
                                                              {"prefix-len", prefix_len},
                                                              {"out", out_path}});
    return kExitOk;
}

int run_qq(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string model_path, data_path, truth_path, out_path, split = "test", config_path;
    int n_mc = 10;
    std::uint64_t seed = 1;
    defaults.apply("model", model_path);
    defaults.apply("data", data_path);
    defaults.apply("true-spec", truth_path);
    defaults.apply("out", out_path);
    defaults.apply("split", split);

    CLI::App app{"QQ quantiles of true vs model intensities at event times"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--model", model_path)->required();
    app.add_option("--data", data_path)->required();
    app.add_option("--true-spec", truth_path)->required();
    app.add_option("--split", split)->check(CLI::IsMember({"train", "val", "test", "all"}));
    app.add_option("--out", out_path, "QQ CSV")->required();
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    auto [params, model_config] = load_checkpoint(model_path);
    Dataset dataset = load_dataset(data_path, model_config.num_types);
    auto indices = select_split(dataset, split);
    HawkesSpec truth = load_hawkes_spec(truth_path);
    EvalOptions options;
    options.n_mc = n_mc;
    options.seed = seed;
    EvalReport report = evaluate(params, model_config, dataset, indices, options, &truth);
    write_qq_csv(report, default_percentiles(), out_path);
    write_resolved_config(sidecar_config_path(out_path), json{{"command", "qq"},
                                                              {"model", model_path},
                                                              {"data", data_path},
                                                              {"true-spec", truth_path},
                                                              {"split", split},
                                                              {"out", out_path}});
    return kExitOk;
}

int run_attn(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string model_path, data_path, out_path, split = "test", config_path;
    defaults.apply("model", model_path);
    defaults.apply("data", data_path);
    defaults.apply("out", out_path);
    defaults.apply("split", split);

    CLI::App app{"aggregate type-to-type attention map over a split"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--model", model_path)->required();
    app.add_option("--data", data_path)->required();
    app.add_option("--split", split)->check(CLI::IsMember({"train", "val", "test", "all"}));
    app.add_option("--out", out_path, "attention map CSV")->required();
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    auto [params, model_config] = load_checkpoint(model_path);
    Dataset dataset = load_dataset(data_path, model_config.num_types);
    auto indices = select_split(dataset, split);
    AttentionMapResult attn = attention_map(params, model_config, dataset, indices);
    write_attention_csv(attn.map, out_path);
    write_resolved_config(sidecar_config_path(out_path), json{{"command", "attn"},
                                                              {"model", model_path},
                                                              {"data", data_path},
                                                              {"split", split},
                                                              {"out", out_path}});
    return kExitOk;
}

int run_reproduce(const std::vector<std::string>& args) {
    ConfigDefaults defaults;
    defaults.load(args);
    std::string out_dir, config_path;
    std::uint64_t seed = 1;
    double scale = 1.0;
    double horizon = 32.0;
    int workers = 1;
    TrainFlags f;  // model/training defaults for the pipeline
    defaults.apply("out-dir", out_dir);
    defaults.apply("seed", seed);
    defaults.apply("scale", scale);
    defaults.apply("horizon", horizon);
    defaults.apply("workers", workers);
    apply_train_defaults(defaults, f);

    CLI::App app{"desk-scale benchmark pipeline: simulate, fit baseline, train, evaluate, QQ"};
    app.add_option("--config", config_path, "JSON config file; flags override its values");
    app.add_option("--out-dir", out_dir)->required();
    app.add_option("--seed", seed);
    app.add_option("--scale", scale, "dataset scale factor (1 = 500 sequences)")->check(CLI::PositiveNumber);
    app.add_option("--horizon", horizon)->check(CLI::PositiveNumber);
    app.add_option("--workers", workers)->check(CLI::PositiveNumber);
    add_train_options(app, f);
    if (int rc = parse_with(app, args); rc >= 0) return rc;

    const int n = static_cast<int>(std::llround(500.0 * scale));
    if (n < 10) throw DataError("reproduce: scale too small, need at least 10 sequences");
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    auto stage = [](const std::string& name, auto&& fn) {
        try {
            fn();
        } catch (const DataError& e) {
            throw DataError("stage " + name + ": " + e.what());
        } catch (const NumericError& e) {
            throw NumericError("stage " + name + ": " + e.what());
        }
    };

    HawkesSpec truth = benchmark_two_type_spec();
    Dataset dataset;
    stage("simulate", [&] {
        save_hawkes_spec(truth, dir / "hawkes_spec.json");
        dataset.num_types = truth.num_types;
        for (int i = 0; i < n; ++i) {
            const std::uint64_t seq_seed =
                splitmix64(hash_bytes("simulate", seed) + static_cast<std::uint64_t>(i));
            dataset.sequences.push_back(simulate_thinning(truth, horizon, seq_seed));
        }
        dataset = split_dataset(dataset, {0.8, 0.1, 0.1}, splitmix64(seed ^ 0x73706c69ULL));
        save_dataset(dataset, dir / "dataset.jsonl");
    });

    HpFitResult hp;
    stage("fit-hp", [&] {
        hp = hp_fit(dataset, hp_default_init(dataset, dataset.indices_of(Split::train)));
        save_hp_params(hp.params, dir / "hp_params.json");
        std::ofstream trace(dir / "hp_fit_trace.csv", std::ios::binary | std::ios::trunc);
        trace.precision(17);
        trace << "iteration,nll\n";
        for (const auto& [it, nll] : hp.trace) trace << it << ',' << nll << "\n";
    });

    SAHPConfig model_config;
    TrainConfig train_config;
    TrainResult trained;
    stage("train", [&] {
        std::tie(model_config, train_config) = configs_from_flags(f, dataset.num_types);
        model_config.time_rescale = resolve_time_rescale(dataset, f.time_rescale, f.model_rate_target);
        train_config.seed = seed;
        train_config.workers = workers;
        ModelParams init = init_params(model_config, seed);
        trained = train(model_config, init, dataset, train_config);
        save_checkpoint(trained.params, model_config, dir / "sahp_checkpoint.json");
        write_history_csv(trained.history, dir / "history.csv");
    });

    EvalReport report;
    json comparison;
    stage("evaluate", [&] {
        auto test_idx = select_split(dataset, "test");
        EvalOptions options;
        options.n_mc = train_config.mc_samples;
        options.seed = splitmix64(seed ^ 0x6576616cULL);
        options.workers = workers;
        report = evaluate(trained.params, model_config, dataset, test_idx, options, &truth);
        save_eval_report(report, dir / "eval_report.json");
        write_qq_csv(report, default_percentiles(), dir / "qq.csv");
        write_attention_csv(report.attention_map, dir / "attention.csv");

        // Baseline on the same accounting window, plus its QQ column.
        double hp_nll = 0.0;
        std::size_t hp_events = 0;
        for (std::size_t idx : test_idx) {
            auto [nll, counted] = hp_windowed_nll(hp.params, dataset.sequences[idx]);
            hp_nll += nll;
            hp_events += counted;
        }
        const double hp_nll_per_event = hp_nll / static_cast<double>(hp_events);

        // The generating process scored on its own data: the attainable floor.
        double oracle_nll = 0.0;
        std::size_t oracle_events = 0;
        for (std::size_t idx : test_idx) {
            auto [nll, counted] = true_windowed_nll(truth, dataset.sequences[idx]);
            oracle_nll += nll;
            oracle_events += counted;
        }
        const double oracle_nll_per_event = oracle_nll / static_cast<double>(oracle_events);
        auto percentiles = default_percentiles();
        auto hp_samples = hp_intensity_samples(hp.params, dataset, test_idx);
        json qq_hp = json::array();
        std::vector<double> mad_sahp, mad_hp;
        for (int u = 0; u < dataset.num_types; ++u) {
            std::vector<double> tru;
            tru.reserve(report.qq_pairs[static_cast<std::size_t>(u)].size());
            for (const auto& [qt, qe] : report.qq_pairs[static_cast<std::size_t>(u)]) tru.push_back(qt);
            // True quantiles are shared; recompute the HP column on the raw samples.
            std::vector<double> truth_samples;
            for (std::size_t idx : test_idx) {
                const Sequence& seq = dataset.sequences[idx];
                if (seq.events.size() < 2) continue;
                std::vector<double> grid;
                for (std::size_t k = 1; k < seq.events.size(); ++k) grid.push_back(seq.events[k].time);
                auto trace = intensity_trace(truth, seq, grid);
                truth_samples.insert(truth_samples.end(), trace[static_cast<std::size_t>(u)].begin(),
                                     trace[static_cast<std::size_t>(u)].end());
            }
            auto pairs_hp = qq_data(truth_samples, hp_samples[static_cast<std::size_t>(u)], percentiles);
            json col = json::array();
            for (const auto& [qt, qe] : pairs_hp) col.push_back({qt, qe});
            qq_hp.push_back(std::move(col));
            mad_sahp.push_back(qq_mad(report.qq_pairs[static_cast<std::size_t>(u)], percentiles, 5.0, 95.0));
            mad_hp.push_back(qq_mad(pairs_hp, percentiles, 5.0, 95.0));
        }
        comparison = json{{"sahp_nll_per_event", report.nll_per_event},
                          {"hp_nll_per_event", hp_nll_per_event},
                          {"oracle_nll_per_event", oracle_nll_per_event},
                          {"nll_margin", hp_nll_per_event - report.nll_per_event},
                          {"qq_mad_sahp", mad_sahp},
                          {"qq_mad_hp", mad_hp},
                          {"qq_mad_percentile_range", {5, 95}},
                          {"qq_pairs_hp", std::move(qq_hp)},
                          {"sahp_macro_f1", report.macro_f1},
                          {"sahp_rmse_scaled", report.rmse_scaled},
                          {"best_epoch", trained.best_epoch},
                          {"best_val_nll_per_event", trained.best_val_nll_per_event}};
        std::ofstream cmp(dir / "comparison.json", std::ios::binary | std::ios::trunc);
        cmp << comparison.dump(2) << "\n";
    });

    json resolved = train_flags_json(f);
    resolved.erase("data");
    resolved.erase("out");
    resolved.erase("history");
    resolved.erase("init-checkpoint");
    resolved["command"] = "reproduce";
    resolved["out-dir"] = out_dir;
    resolved["seed"] = seed;
    resolved["scale"] = scale;
    resolved["horizon"] = horizon;
    resolved["workers"] = workers;
    write_resolved_config(dir / "config.json", resolved);
    std::cerr << "reproduce: sahp " << comparison["sahp_nll_per_event"] << " vs hp "
              << comparison["hp_nll_per_event"] << " nll/event\n";
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    static const std::string usage =
        "usage: sahp <simulate|fit-hp|train|evaluate|predict|qq|attn|reproduce> [options]\n"
        "run `sahp <subcommand> --help` for the option list\n";
    if (args.empty()) {
        std::cerr << usage;
        return kExitUsage;
    }
    const std::string& command = args.front();
    std::vector<std::string> rest(args.begin() + 1, args.end());
    try {
        if (command == "simulate") return run_simulate(rest);
        if (command == "fit-hp") return run_fit_hp(rest);
        if (command == "train") return run_train(rest);
        if (command == "evaluate") return run_evaluate(rest);
        if (command == "predict") return run_predict(rest);
        if (command == "qq") return run_qq(rest);
        if (command == "attn") return run_attn(rest);
        if (command == "reproduce") return run_reproduce(rest);
        if (command == "--help" || command == "-h" || command == "help") {
            std::cout << usage;
            return kExitOk;
        }
        std::cerr << "unknown subcommand: " << command << "\n" << usage;
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}

}  // namespace sahp::cli
