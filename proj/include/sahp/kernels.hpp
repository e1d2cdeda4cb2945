#pragma once

#include <string>
#include <variant>
#include <vector>

namespace sahp {

/// Triggering kernels. Every kernel is >= 0 for t >= 0 and exactly 0 for
/// t < 0 (causality of the endogenous intensity).
namespace kernels {

/// alpha * exp(-gamma t)
struct Exponential {
    double alpha = 0.0;  // >= 0
    double gamma = 1.0;  // > 0
};

/// scale * (offset + t)^(-exponent)
struct PowerLaw {
    double scale = 0.0;     // >= 0
    double offset = 1.0;    // > 0
    double exponent = 1.0;  // > 0
};

/// Sum of exponential terms.
struct SumExponential {
    std::vector<Exponential> terms;
};

/// max(0, sin(t) / divisor) on [0, support_end], 0 elsewhere.
struct BoundedSine {
    double divisor = 1.0;      // > 0
    double support_end = 1.0;  // > 0
};

struct Zero {};

}  // namespace kernels

using KernelSpec = std::variant<kernels::Exponential, kernels::PowerLaw, kernels::SumExponential,
                                kernels::BoundedSine, kernels::Zero>;

/// phi(t); 0 for t < 0 and beyond a bounded kernel's support.
double kernel_eval(const KernelSpec& spec, double t);

/// sup over t >= delta of phi(t). Analytic: the monotone kernels peak at
/// delta, the bounded sine at the nearest sine extremum inside its support.
/// Dominating bound used by the thinning simulator.
double kernel_sup_tail(const KernelSpec& spec, double delta);

/// Validates parameter ranges; throws DataError on violation.
void validate_kernel(const KernelSpec& spec);

/// JSON tagged-union codec ({"kind": "exponential", ...}).
std::string kernel_to_json(const KernelSpec& spec);
KernelSpec kernel_from_json(const std::string& text);

}  // namespace sahp
