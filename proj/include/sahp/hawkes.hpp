#pragma once

#include <filesystem>
#include <span>

#include "sahp/kernels.hpp"
#include "sahp/types.hpp"

namespace sahp {

/// Ground-truth multivariate Hawkes specification: per-type base rates and a
/// U x U triggering-kernel matrix where kernels[u][v] is the influence of a
/// historical type-v event on the type-u intensity.
struct HawkesSpec {
    int num_types = 1;
    std::vector<double> base;                     // mu_u >= 0, size U
    std::vector<std::vector<KernelSpec>> kernels; // [u][v], U x U

    void validate() const;
};

/// lambda_u(t) given the events in `history` (all strictly before t):
/// mu_u + sum over history events (v', t') of kernels[u][v'](t - t').
double true_intensity(const HawkesSpec& spec, std::span<const Event> history, double t, int u);

/// Ogata's modified thinning. The dominating bound after each candidate is
/// B(s) = sum_u [mu_u + sum_history kernel_sup_tail(phi_{u,v'}, s - t')],
/// which dominates the future total intensity even for the non-monotone
/// bounded-sine kernel. Deterministic for a given seed.
Sequence simulate_thinning(const HawkesSpec& spec, double horizon, std::uint64_t seed);

/// lambda_u at each grid time, conditioning on events strictly before that
/// time (left limits). Rows are types, columns grid points. Grid must be
/// sorted and within [0, horizon].
std::vector<std::vector<double>> intensity_trace(const HawkesSpec& spec, const Sequence& seq,
                                                 std::span<const double> grid);

/// Per-event NLL of the spec's own intensity on the accounting window
/// (t_1, T]: event terms for events 2..L and a trapezoid compensator with
/// the given per-interval resolution. Returns {nll, counted_events}.
/// The reference line for goodness-of-fit comparisons on simulated data.
std::pair<double, std::size_t> true_windowed_nll(const HawkesSpec& spec, const Sequence& seq,
                                                 int points_per_interval = 400);

std::string hawkes_spec_to_json(const HawkesSpec& spec);
HawkesSpec hawkes_spec_from_json(const std::string& text);
HawkesSpec load_hawkes_spec(const std::filesystem::path& path);
void save_hawkes_spec(const HawkesSpec& spec, const std::filesystem::path& path);

/// The two-type benchmark process used across the docs and tests: base rates
/// (0.1, 0.2) with power-law, exponential, sum-of-exponentials and bounded
/// sine triggering kernels.
HawkesSpec benchmark_two_type_spec();

}  // namespace sahp
