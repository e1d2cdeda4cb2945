#pragma once

#include <functional>
#include <optional>

#include "sahp/hawkes.hpp"
#include "sahp/model.hpp"
#include "sahp/types.hpp"

namespace sahp {

/// Geometric-progression trapezoid grid: dense near the interval start,
/// stepping by `growth` per point, cut off once the survival probability
/// drops below `survival_cutoff`. The default cutoff sits far below the
/// 1e-3 mass requirement because the truncated tail biases the expected
/// time by roughly survival * cutoff-time.
struct QuadratureConfig {
    double first_step_fraction = 1e-4;  // first step = fraction / lambda(start)
    double growth = 1.01;
    double survival_cutoff = 1e-7;
    int max_points = 2000000;  // hard limit; exceeding it raises NumericError

    /// A grid `factor` times denser (smaller first step, gentler growth).
    QuadratureConfig refined(double factor) const;
};

/// Typed intensity on one inter-event interval: lambda(type, t).
using TypedIntensity = std::function<double(int, double)>;

struct PredictionResult {
    double predicted_time = 0.0;
    std::vector<double> type_scores;  // non-negative, sums to 1
    int predicted_type = 0;           // argmax, lowest index wins ties
    double captured_mass = 0.0;       // quadrature mass before renormalization
};

/// integral of sum_u lambda(u, t) over [t_start, t_end], trapezoid with
/// doubling refinement until the estimate stabilizes.
double integrate_total_intensity(const TypedIntensity& lambda, int num_types, double t_start, double t_end);

/// p(t) = lambda(t) exp(-integral of lambda from t_start to t).
double density_from_intensity(const TypedIntensity& lambda, int num_types, double t_start, double t);

/// Expected next-event time and type scores by quadrature of t p(t) and
/// (lambda_u / lambda) p(t) up to the survival cutoff, renormalized.
PredictionResult predict_from_intensity(const TypedIntensity& lambda, int num_types, double t_start,
                                        const QuadratureConfig& quad = {});

/// Sum of per-type Eq.-style interval intensities for the given states.
TypedIntensity states_intensity(std::vector<IntensityState> states);

// SAHP-model wrappers over the generic quadrature core.
double next_event_density(const ModelParams& params, const SAHPConfig& config, std::span<const Event> prefix,
                          double t);
PredictionResult predict_next(const ModelParams& params, const SAHPConfig& config,
                              std::span<const Event> prefix, const QuadratureConfig& quad = {});

/// Empirical quantile pairs (linear interpolation) of two samples at the
/// given percentiles, each strictly inside (0, 100).
std::vector<std::pair<double, double>> qq_data(std::span<const double> true_values,
                                               std::span<const double> estimated_values,
                                               std::span<const double> percentiles);

struct AttentionMapResult {
    std::vector<std::vector<double>> map;  // U x U, rows sum to 1
    std::vector<int> uniform_rows;         // rows reported uniform for lack of mass
};

/// Query-to-key attention averaged over layers and heads, accumulated from
/// the realized next-type query at each position, frequency-normalized by
/// the (u, v) pair count, then row-normalized.
AttentionMapResult attention_map(const ModelParams& params, const SAHPConfig& config, const Dataset& dataset,
                                 const std::vector<std::size_t>& indices);

struct EvalOptions {
    int n_mc = 10;
    std::uint64_t seed = 0;
    QuadratureConfig quad;
    int workers = 1;
    std::vector<double> qq_percentiles;  // defaults to 1..99
};

struct EvalReport {
    double nll_per_event = 0.0;
    double macro_f1 = 0.0;
    double rmse_scaled = 0.0;
    std::size_t counted_events = 0;
    std::size_t predictions = 0;
    std::size_t skipped_zero_intervals = 0;
    // Per type: (true quantile, estimated quantile) pairs; filled only when a
    // ground-truth spec is supplied.
    std::vector<std::vector<std::pair<double, double>>> qq_pairs;
    std::vector<std::vector<double>> attention_map;  // U x U
    std::vector<int> attention_uniform_rows;
};

/// The full metric suite on a dataset split: per-event NLL, macro-F1 over
/// next-type predictions, scaled-interval RMSE, the attention map, and QQ
/// quantiles against the true intensities when `truth` is given.
EvalReport evaluate(const ModelParams& params, const SAHPConfig& config, const Dataset& dataset,
                    const std::vector<std::size_t>& indices, const EvalOptions& options,
                    const HawkesSpec* truth = nullptr);

std::string eval_report_to_json(const EvalReport& report);
void save_eval_report(const EvalReport& report, const std::filesystem::path& path);
void write_qq_csv(const EvalReport& report, const std::vector<double>& percentiles,
                  const std::filesystem::path& path);
void write_attention_csv(const std::vector<std::vector<double>>& map, const std::filesystem::path& path);

}  // namespace sahp
