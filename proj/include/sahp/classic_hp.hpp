#pragma once

#include <filesystem>
#include <span>

#include "sahp/types.hpp"

namespace sahp {

/// Exponential-kernel multivariate Hawkes parameters:
/// lambda_u(t) = mu_u + sum over history (v',t') of
///               alpha[u][v'] * exp(-gamma[u][v'] * (t - t')).
struct HawkesParams {
    std::vector<double> base;                     // mu_u >= 0
    std::vector<std::vector<double>> excitation;  // alpha[u][v] >= 0
    std::vector<std::vector<double>> decay;       // gamma[u][v] > 0

    int num_types() const { return static_cast<int>(base.size()); }
    void validate() const;
};

double hp_intensity(const HawkesParams& params, std::span<const Event> history, double t, int u);

/// Closed form of the integral of the total intensity over [0, T]:
/// sum_u mu_u T + sum_u sum_j (alpha/gamma)(1 - exp(-gamma (T - t_j))).
double hp_compensator(const HawkesParams& params, const Sequence& seq);

/// Log-likelihood over [0, T]: sum_i log lambda_{v_i}(t_i) - compensator.
/// Throws NumericError when some event sees a non-positive intensity.
double hp_loglik(const HawkesParams& params, const Sequence& seq);

/// Flat log-parameter vector: [log mu (U), log alpha (U*U row-major),
/// log gamma (U*U row-major)]. The fit runs in this space so positivity
/// holds by construction.
std::vector<double> hp_params_to_log(const HawkesParams& params);
HawkesParams hp_params_from_log(std::span<const double> theta, int num_types);

/// Total log-likelihood over the given sequences and its analytic gradient
/// with respect to the log parameters. O(L * U^2) per sequence via the
/// standard exponential-kernel recursions.
double hp_loglik_and_grad(const HawkesParams& params, std::span<const Sequence* const> seqs,
                          std::vector<double>* grad_log);

/// Per-event NLL on the accounting window (t_1, T]: the first event is
/// treated as given history (no log term, no compensator before it). This is
/// the window shared with the attention model so the two NLL columns of the
/// evaluation report are comparable. Returns {nll, counted_events}.
std::pair<double, std::size_t> hp_windowed_nll(const HawkesParams& params, const Sequence& seq);

struct HpFitOptions {
    int max_iterations = 1000;
    double relative_tolerance = 1e-6;  // stop when NLL improves less than this, relatively
    int lbfgs_memory = 8;
};

struct HpFitResult {
    HawkesParams params;
    double final_nll = 0.0;  // total negative log-likelihood over the fitted split
    int iterations = 0;
    bool converged = false;
    std::vector<std::pair<int, double>> trace;  // (iteration, nll)
};

/// Default starting point: mu = events/(U*T) averaged over sequences,
/// alpha = 0.1, gamma = 1.
HawkesParams hp_default_init(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Maximum-likelihood fit over the dataset's train split (all sequences when
/// the dataset is unlabeled). L-BFGS with Armijo backtracking on the log
/// parameters; accepted steps never increase the NLL.
HpFitResult hp_fit(const Dataset& dataset, const HawkesParams& init, const HpFitOptions& opt = {});

std::string hp_params_to_json(const HawkesParams& params);
HawkesParams hp_params_from_json(const std::string& text);
void save_hp_params(const HawkesParams& params, const std::filesystem::path& path);
HawkesParams load_hp_params(const std::filesystem::path& path);

}  // namespace sahp
