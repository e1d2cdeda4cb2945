#include "sahp/kernels.hpp"

#include <cmath>

#include <json.hpp>

#include "sahp/types.hpp"

namespace sahp {

namespace {

using nlohmann::json;

double sine_value(const kernels::BoundedSine& k, double t) {
    if (t < 0.0 || t > k.support_end) return 0.0;
    return std::max(0.0, std::sin(t)) / k.divisor;
}

}  // namespace

double kernel_eval(const KernelSpec& spec, double t) {
    if (t < 0.0) return 0.0;
    return std::visit(
        [t](const auto& k) -> double {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, kernels::Exponential>) {
                return k.alpha * std::exp(-k.gamma * t);
            } else if constexpr (std::is_same_v<T, kernels::PowerLaw>) {
                return k.scale * std::pow(k.offset + t, -k.exponent);
            } else if constexpr (std::is_same_v<T, kernels::SumExponential>) {
                double v = 0.0;
                for (const auto& term : k.terms) v += term.alpha * std::exp(-term.gamma * t);
                return v;
            } else if constexpr (std::is_same_v<T, kernels::BoundedSine>) {
                return sine_value(k, t);
            } else {
                return 0.0;
            }
        },
        spec);
}

double kernel_sup_tail(const KernelSpec& spec, double delta) {
    if (delta < 0.0) throw std::invalid_argument("kernel_sup_tail: delta must be >= 0");
    return std::visit(
        [delta, &spec](const auto& k) -> double {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, kernels::BoundedSine>) {
                if (delta > k.support_end) return 0.0;
                // Candidates: the endpoints of [delta, support_end] and any
                // sine peak pi/2 + 2*pi*m inside it.
                double best = std::max(sine_value(k, delta), sine_value(k, k.support_end));
                double first_peak = M_PI / 2.0 + 2.0 * M_PI * std::ceil((delta - M_PI / 2.0) / (2.0 * M_PI));
                if (first_peak >= delta && first_peak <= k.support_end) {
                    best = std::max(best, 1.0 / k.divisor);
                }
                return best;
            } else {
                // Exponential, power law, and their sums are non-increasing
                // on t >= 0, so the tail supremum sits at delta.
                (void)k;
                return kernel_eval(spec, delta);
            }
        },
        spec);
}

void validate_kernel(const KernelSpec& spec) {
    std::visit(
        [](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, kernels::Exponential>) {
                if (k.alpha < 0.0 || !(k.gamma > 0.0)) throw DataError("exponential kernel needs alpha >= 0, gamma > 0");
            } else if constexpr (std::is_same_v<T, kernels::PowerLaw>) {
                if (k.scale < 0.0 || !(k.offset > 0.0) || !(k.exponent > 0.0)) {
                    throw DataError("power-law kernel needs scale >= 0, offset > 0, exponent > 0");
                }
            } else if constexpr (std::is_same_v<T, kernels::SumExponential>) {
                for (const auto& term : k.terms) {
                    if (term.alpha < 0.0 || !(term.gamma > 0.0)) {
                        throw DataError("sum-exponential term needs alpha >= 0, gamma > 0");
                    }
                }
            } else if constexpr (std::is_same_v<T, kernels::BoundedSine>) {
                if (!(k.divisor > 0.0) || !(k.support_end > 0.0)) {
                    throw DataError("bounded-sine kernel needs divisor > 0, support end > 0");
                }
            }
        },
        spec);
}

namespace detail {

json kernel_to_json_obj(const KernelSpec& spec) {
    return std::visit(
        [](const auto& k) -> json {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, kernels::Exponential>) {
                return {{"kind", "exponential"}, {"alpha", k.alpha}, {"gamma", k.gamma}};
            } else if constexpr (std::is_same_v<T, kernels::PowerLaw>) {
                return {{"kind", "power_law"}, {"scale", k.scale}, {"offset", k.offset}, {"exponent", k.exponent}};
            } else if constexpr (std::is_same_v<T, kernels::SumExponential>) {
                json terms = json::array();
                for (const auto& term : k.terms) terms.push_back({{"alpha", term.alpha}, {"gamma", term.gamma}});
                return {{"kind", "sum_exponential"}, {"terms", std::move(terms)}};
            } else if constexpr (std::is_same_v<T, kernels::BoundedSine>) {
                return {{"kind", "bounded_sine"}, {"divisor", k.divisor}, {"support_end", k.support_end}};
            } else {
                return {{"kind", "zero"}};
            }
        },
        spec);
}

KernelSpec kernel_from_json_obj(const json& j) {
    if (!j.is_object() || !j.contains("kind")) throw DataError("kernel JSON needs a \"kind\" tag");
    const std::string kind = j.at("kind").get<std::string>();
    KernelSpec spec;
    if (kind == "exponential") {
        spec = kernels::Exponential{j.at("alpha").get<double>(), j.at("gamma").get<double>()};
    } else if (kind == "power_law") {
        spec = kernels::PowerLaw{j.at("scale").get<double>(), j.at("offset").get<double>(),
                                 j.at("exponent").get<double>()};
    } else if (kind == "sum_exponential") {
        kernels::SumExponential k;
        for (const auto& jt : j.at("terms")) {
            k.terms.push_back({jt.at("alpha").get<double>(), jt.at("gamma").get<double>()});
        }
        spec = std::move(k);
    } else if (kind == "bounded_sine") {
        spec = kernels::BoundedSine{j.at("divisor").get<double>(), j.at("support_end").get<double>()};
    } else if (kind == "zero") {
        spec = kernels::Zero{};
    } else {
        throw DataError("unknown kernel kind: " + kind);
    }
    validate_kernel(spec);
    return spec;
}

}  // namespace detail

std::string kernel_to_json(const KernelSpec& spec) { return detail::kernel_to_json_obj(spec).dump(); }

KernelSpec kernel_from_json(const std::string& text) {
    try {
        return detail::kernel_from_json_obj(json::parse(text));
    } catch (const json::parse_error& e) {
        throw DataError(std::string("kernel JSON parse error: ") + e.what());
    }
}

}  // namespace sahp
