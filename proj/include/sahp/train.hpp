#pragma once

#include <map>
#include <optional>

#include "sahp/model.hpp"
#include "sahp/types.hpp"

namespace sahp {

struct TrainConfig {
    double learning_rate = 1e-4;
    int warmup_steps = 500;
    int batch_size = 16;
    int max_epochs = 100;
    double early_stop_delta = 1e-3;
    int patience = 5;
    int mc_samples = 10;
    std::uint64_t seed = 0;
    double grad_clip_norm = 5.0;
    int workers = 1;

    void validate() const;
};

/// Stratified per-interval sample offsets in (0,1): one uniform draw per
/// equal sub-interval, offsets[k][s] = (s + u)/n. Row k covers the interval
/// opening at event k (the last row reaches to the horizon).
ad::Mat draw_mc_offsets(std::size_t num_intervals, int n, RngStream& rng);

/// Monte Carlo estimate of the integral of the total intensity over
/// (t_1, T]: per interval, length times the mean of sum_u lambda_u at the
/// sampled times. States come from the per-type query streams.
double mc_compensator(const ModelParams& params, const SAHPConfig& config, const Sequence& seq, int n,
                      RngStream& rng);

/// Negative log-likelihood of one sequence on the accounting window
/// (t_1, T]: event terms for events 2..L plus the MC compensator. Sequences
/// with a single event contribute the compensator only.
double sequence_nll(const ModelParams& params, const SAHPConfig& config, const Sequence& seq, int n_samples,
                    RngStream& rng);

// Same quantities from precomputed per-interval states (states[k][u] on the
// interval opening at event k), for callers that already ran a forward pass.
double mc_compensator_from_states(const std::vector<std::vector<IntensityState>>& states, const Sequence& seq,
                                  int n, RngStream& rng);
double nll_from_states(const std::vector<std::vector<IntensityState>>& states, const Sequence& seq,
                       int n_samples, RngStream& rng);

/// Named gradients, one entry per trainable tensor.
using GradientMap = std::map<std::string, ad::Mat>;

struct NllWithGrad {
    double nll = 0.0;
    std::size_t counted_events = 0;
    GradientMap grads;
};

/// Exact sample-path gradient of the summed sequence NLL over the batch with
/// respect to every trainable tensor; MC sample locations are drawn from the
/// rng children and held fixed inside the differentiation. Dropout masks are
/// drawn when `dropout_rng` streams are provided.
NllWithGrad batch_nll_grad(const ModelParams& params, const SAHPConfig& config,
                           std::span<const Sequence* const> batch, int n_samples, RngStream mc_rng,
                           std::optional<RngStream> dropout_rng, int workers = 1);

/// Graph-level NLL for one sequence with externally fixed MC offsets; the
/// seam used by the finite-difference oracle.
ad::Var sequence_nll_node(ad::Graph& graph, const ParamVars& pv, const SAHPConfig& config,
                          const Sequence& seq, const ad::Mat& mc_offsets, RngStream* dropout_rng,
                          AttentionCapture* capture = nullptr);

/// base_lr * step / warmup_steps for steps inside the warm-up, base_lr after.
double warmup_learning_rate(double base_lr, int step, int warmup_steps);

struct EpochLog {
    int epoch = 0;
    int step = 0;  // global optimizer step count at epoch end
    double train_nll_per_event = 0.0;
    double val_nll_per_event = 0.0;
    double learning_rate = 0.0;
    double wall_time_sec = 0.0;  // excluded from the determinism contract
};

struct TrainResult {
    ModelParams params;  // best-validation checkpoint
    std::vector<EpochLog> history;
    double best_val_nll_per_event = 0.0;
    int best_epoch = 0;
    int total_steps = 0;
    bool early_stopped = false;
};

/// Adam with linear learning-rate warm-up (lr * s / warmup_steps for steps
/// s <= warmup_steps, constant afterwards), gradient clipping by global
/// norm, per-epoch validation with dropout off and a fixed validation MC
/// seed, and early stopping on the validation NLL per event.
TrainResult train(const SAHPConfig& model_config, const ModelParams& init, const Dataset& dataset,
                  const TrainConfig& config);

/// Per-event NLL of a set of sequences with a deterministic MC stream per
/// sequence index. Returns {total nll, counted events}.
std::pair<double, std::size_t> dataset_nll(const ModelParams& params, const SAHPConfig& config,
                                           const Dataset& dataset, const std::vector<std::size_t>& indices,
                                           int n_samples, std::uint64_t seed, int workers = 1);

void write_history_csv(const std::vector<EpochLog>& history, const std::filesystem::path& path);

}  // namespace sahp
