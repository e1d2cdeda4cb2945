#include "sahp/classic_hp.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sahp/lbfgs.hpp"

namespace sahp {

namespace {

std::size_t idx(int u, int v, int num_types) {
    return static_cast<std::size_t>(u) * static_cast<std::size_t>(num_types) + static_cast<std::size_t>(v);
}

}  // namespace

void HawkesParams::validate() const {
    const int u_count = num_types();
    if (u_count < 1) throw DataError("HawkesParams: at least one type required");
    for (double mu : base) {
        if (!std::isfinite(mu) || mu < 0.0) throw DataError("HawkesParams: base rates must be finite and >= 0");
    }
    if (static_cast<int>(excitation.size()) != u_count || static_cast<int>(decay.size()) != u_count) {
        throw DataError("HawkesParams: excitation/decay must be U x U");
    }
    for (int u = 0; u < u_count; ++u) {
        if (static_cast<int>(excitation[u].size()) != u_count || static_cast<int>(decay[u].size()) != u_count) {
            throw DataError("HawkesParams: excitation/decay must be U x U");
        }
        for (int v = 0; v < u_count; ++v) {
            if (!std::isfinite(excitation[u][v]) || excitation[u][v] < 0.0) {
                throw DataError("HawkesParams: excitation must be finite and >= 0");
            }
            if (!std::isfinite(decay[u][v]) || !(decay[u][v] > 0.0)) {
                throw DataError("HawkesParams: decay must be finite and > 0");
            }
        }
    }
}

double hp_intensity(const HawkesParams& params, std::span<const Event> history, double t, int u) {
    if (u < 0 || u >= params.num_types()) throw std::invalid_argument("hp_intensity: type out of range");
    double lambda = params.base[static_cast<std::size_t>(u)];
    for (const Event& ev : history) {
        if (!(ev.time < t)) throw std::invalid_argument("hp_intensity: history must be strictly before t");
        const auto v = static_cast<std::size_t>(ev.type);
        lambda += params.excitation[static_cast<std::size_t>(u)][v] *
                  std::exp(-params.decay[static_cast<std::size_t>(u)][v] * (t - ev.time));
    }
    return lambda;
}

double hp_compensator(const HawkesParams& params, const Sequence& seq) {
    const int u_count = params.num_types();
    const double T = seq.horizon;
    double total = 0.0;
    for (int u = 0; u < u_count; ++u) total += params.base[static_cast<std::size_t>(u)] * T;
    for (const Event& ev : seq.events) {
        const auto v = static_cast<std::size_t>(ev.type);
        const double remaining = T - ev.time;
        for (int u = 0; u < u_count; ++u) {
            const double alpha = params.excitation[static_cast<std::size_t>(u)][v];
            const double gamma = params.decay[static_cast<std::size_t>(u)][v];
            total += alpha / gamma * (1.0 - std::exp(-gamma * remaining));
        }
    }
    return total;
}

double hp_loglik(const HawkesParams& params, const Sequence& seq) {
    double ll = -hp_compensator(params, seq);
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        std::span<const Event> history(seq.events.data(), i);
        const double lambda = hp_intensity(params, history, seq.events[i].time, seq.events[i].type);
        if (!(lambda > 0.0)) {
            throw NumericError("hp_loglik: non-positive intensity at event " + std::to_string(i) +
                               " (infeasible parameters)");
        }
        ll += std::log(lambda);
    }
    return ll;
}

std::vector<double> hp_params_to_log(const HawkesParams& params) {
    const int u_count = params.num_types();
    std::vector<double> theta;
    theta.reserve(static_cast<std::size_t>(u_count) * (1 + 2 * static_cast<std::size_t>(u_count)));
    auto push_log = [&theta](double v) {
        if (!(v > 0.0)) throw DataError("log-parameterization needs strictly positive parameters");
        theta.push_back(std::log(v));
    };
    for (int u = 0; u < u_count; ++u) push_log(params.base[static_cast<std::size_t>(u)]);
    for (int u = 0; u < u_count; ++u)
        for (int v = 0; v < u_count; ++v) push_log(params.excitation[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]);
    for (int u = 0; u < u_count; ++u)
        for (int v = 0; v < u_count; ++v) push_log(params.decay[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]);
    return theta;
}

HawkesParams hp_params_from_log(std::span<const double> theta, int num_types) {
    const auto u_count = static_cast<std::size_t>(num_types);
    if (theta.size() != u_count * (1 + 2 * u_count)) throw DataError("log-parameter vector has wrong length");
    HawkesParams params;
    params.base.resize(u_count);
    params.excitation.assign(u_count, std::vector<double>(u_count, 0.0));
    params.decay.assign(u_count, std::vector<double>(u_count, 0.0));
    std::size_t k = 0;
    for (std::size_t u = 0; u < u_count; ++u) params.base[u] = std::exp(theta[k++]);
    for (std::size_t u = 0; u < u_count; ++u)
        for (std::size_t v = 0; v < u_count; ++v) params.excitation[u][v] = std::exp(theta[k++]);
    for (std::size_t u = 0; u < u_count; ++u)
        for (std::size_t v = 0; v < u_count; ++v) params.decay[u][v] = std::exp(theta[k++]);
    return params;
}

double hp_loglik_and_grad(const HawkesParams& params, std::span<const Sequence* const> seqs,
                          std::vector<double>* grad_log) {
    const int u_count = params.num_types();
    const auto pairs = static_cast<std::size_t>(u_count) * static_cast<std::size_t>(u_count);
    std::vector<double> d_mu(static_cast<std::size_t>(u_count), 0.0);
    std::vector<double> d_alpha(pairs, 0.0), d_gamma(pairs, 0.0);
    double ll = 0.0;

    // Exponential-kernel recursions per (u, v) pair:
    //   r1[u][v](i) = sum_{j<i, v_j=v} exp(-gamma_{u,v} (t_i - t_j))
    //   r2[u][v](i) = sum_{j<i, v_j=v} (t_i - t_j) exp(-gamma_{u,v} (t_i - t_j))
    std::vector<double> r1(pairs), r2(pairs);
    for (const Sequence* seq_ptr : seqs) {
        const Sequence& seq = *seq_ptr;
        std::fill(r1.begin(), r1.end(), 0.0);
        std::fill(r2.begin(), r2.end(), 0.0);
        for (std::size_t i = 0; i < seq.events.size(); ++i) {
            const Event& ev = seq.events[i];
            if (i > 0) {
                const double dt = ev.time - seq.events[i - 1].time;
                const int prev_type = seq.events[i - 1].type;
                for (int u = 0; u < u_count; ++u) {
                    for (int v = 0; v < u_count; ++v) {
                        const std::size_t p = idx(u, v, u_count);
                        const double decay_step = std::exp(-params.decay[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] * dt);
                        const double hit = (prev_type == v) ? 1.0 : 0.0;
                        r2[p] = decay_step * (r2[p] + dt * (r1[p] + hit));
                        r1[p] = decay_step * (r1[p] + hit);
                    }
                }
            }
            const auto u_ev = static_cast<std::size_t>(ev.type);
            double lambda = params.base[u_ev];
            for (int v = 0; v < u_count; ++v) {
                lambda += params.excitation[u_ev][static_cast<std::size_t>(v)] * r1[idx(ev.type, v, u_count)];
            }
            if (!(lambda > 0.0)) {
                throw NumericError("hp_loglik_and_grad: non-positive intensity at event " + std::to_string(i));
            }
            ll += std::log(lambda);
            const double inv_lambda = 1.0 / lambda;
            d_mu[u_ev] += inv_lambda;
            for (int v = 0; v < u_count; ++v) {
                const std::size_t p = idx(ev.type, v, u_count);
                d_alpha[p] += inv_lambda * r1[p];
                d_gamma[p] -= inv_lambda * params.excitation[u_ev][static_cast<std::size_t>(v)] * r2[p];
            }
        }
        // Compensator and its derivatives.
        const double T = seq.horizon;
        for (int u = 0; u < u_count; ++u) {
            ll -= params.base[static_cast<std::size_t>(u)] * T;
            d_mu[static_cast<std::size_t>(u)] -= T;
        }
        for (const Event& ev : seq.events) {
            const auto v = static_cast<std::size_t>(ev.type);
            const double remaining = T - ev.time;
            for (int u = 0; u < u_count; ++u) {
                const std::size_t p = idx(u, ev.type, u_count);
                const double alpha = params.excitation[static_cast<std::size_t>(u)][v];
                const double gamma = params.decay[static_cast<std::size_t>(u)][v];
                const double decayed = std::exp(-gamma * remaining);
                const double one_minus = 1.0 - decayed;
                ll -= alpha / gamma * one_minus;
                d_alpha[p] -= one_minus / gamma;
                d_gamma[p] -= alpha * (remaining * decayed / gamma - one_minus / (gamma * gamma));
            }
        }
    }

    if (grad_log) {
        grad_log->resize(static_cast<std::size_t>(u_count) + 2 * pairs);
        std::size_t k = 0;
        for (int u = 0; u < u_count; ++u) {
            (*grad_log)[k++] = d_mu[static_cast<std::size_t>(u)] * params.base[static_cast<std::size_t>(u)];
        }
        for (int u = 0; u < u_count; ++u) {
            for (int v = 0; v < u_count; ++v) {
                const std::size_t p = idx(u, v, u_count);
                (*grad_log)[k++] = d_alpha[p] * params.excitation[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)];
            }
        }
        for (int u = 0; u < u_count; ++u) {
            for (int v = 0; v < u_count; ++v) {
                const std::size_t p = idx(u, v, u_count);
                (*grad_log)[k++] = d_gamma[p] * params.decay[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)];
            }
        }
    }
    return ll;
}

std::pair<double, std::size_t> hp_windowed_nll(const HawkesParams& params, const Sequence& seq) {
    if (seq.events.empty()) return {0.0, 0};
    const int u_count = params.num_types();
    const double T = seq.horizon;
    const double t1 = seq.events.front().time;
    double nll = 0.0;
    for (int u = 0; u < u_count; ++u) nll += params.base[static_cast<std::size_t>(u)] * (T - t1);
    for (const Event& ev : seq.events) {
        const auto v = static_cast<std::size_t>(ev.type);
        const double remaining = T - ev.time;
        for (int u = 0; u < u_count; ++u) {
            const double alpha = params.excitation[static_cast<std::size_t>(u)][v];
            const double gamma = params.decay[static_cast<std::size_t>(u)][v];
            nll += alpha / gamma * (1.0 - std::exp(-gamma * remaining));
        }
    }
    for (std::size_t i = 1; i < seq.events.size(); ++i) {
        std::span<const Event> history(seq.events.data(), i);
        const double lambda = hp_intensity(params, history, seq.events[i].time, seq.events[i].type);
        if (!(lambda > 0.0)) throw NumericError("hp_windowed_nll: non-positive intensity");
        nll -= std::log(lambda);
    }
    return {nll, seq.events.size() - 1};
}

HawkesParams hp_default_init(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    const auto u_count = static_cast<std::size_t>(dataset.num_types);
    double rate = 0.0;
    std::size_t counted = 0;
    for (std::size_t i : indices) {
        const Sequence& seq = dataset.sequences[i];
        if (seq.horizon > 0.0) {
            rate += static_cast<double>(seq.size()) / (static_cast<double>(u_count) * seq.horizon);
            ++counted;
        }
    }
    rate = counted > 0 ? rate / static_cast<double>(counted) : 1.0;
    rate = std::max(rate, 1e-4);
    HawkesParams params;
    params.base.assign(u_count, rate);
    params.excitation.assign(u_count, std::vector<double>(u_count, 0.1));
    params.decay.assign(u_count, std::vector<double>(u_count, 1.0));
    return params;
}

HpFitResult hp_fit(const Dataset& dataset, const HawkesParams& init, const HpFitOptions& opt) {
    init.validate();
    auto indices = dataset.indices_of(Split::train);
    if (indices.empty()) throw DataError("hp_fit: empty training split");
    std::vector<const Sequence*> seqs;
    seqs.reserve(indices.size());
    for (std::size_t i : indices) seqs.push_back(&dataset.sequences[i]);

    const int u_count = dataset.num_types;
    if (init.num_types() != u_count) throw DataError("hp_fit: init has wrong number of types");

    auto objective = [&](const std::vector<double>& theta, std::vector<double>& grad) -> double {
        HawkesParams params = hp_params_from_log(theta, u_count);
        std::vector<double> grad_ll;
        double ll;
        try {
            ll = hp_loglik_and_grad(params, seqs, &grad_ll);
        } catch (const NumericError&) {
            // exp underflow can zero out an intensity on a wild line-search
            // trial; report an infinite objective so the step is rejected
            grad.assign(theta.size(), 0.0);
            return std::numeric_limits<double>::infinity();
        }
        grad.resize(grad_ll.size());
        for (std::size_t i = 0; i < grad_ll.size(); ++i) grad[i] = -grad_ll[i];
        return -ll;
    };

    LbfgsOptions lopt;
    lopt.max_iterations = opt.max_iterations;
    lopt.relative_tolerance = opt.relative_tolerance;
    lopt.memory = opt.lbfgs_memory;
    LbfgsResult lres = lbfgs_minimize(objective, hp_params_to_log(init), lopt);

    HpFitResult result;
    result.params = hp_params_from_log(lres.x, u_count);
    result.final_nll = lres.value;
    result.iterations = lres.iterations;
    result.converged = lres.converged;
    result.trace = std::move(lres.trace);
    return result;
}

std::string hp_params_to_json(const HawkesParams& params) {
    nlohmann::json j{{"num_types", params.num_types()},
                     {"base", params.base},
                     {"excitation", params.excitation},
                     {"decay", params.decay}};
    return j.dump(2) + "\n";
}

HawkesParams hp_params_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("Hawkes params JSON parse error: ") + e.what());
    }
    HawkesParams params;
    params.base = j.at("base").get<std::vector<double>>();
    params.excitation = j.at("excitation").get<std::vector<std::vector<double>>>();
    params.decay = j.at("decay").get<std::vector<std::vector<double>>>();
    params.validate();
    return params;
}

void save_hp_params(const HawkesParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out << hp_params_to_json(params);
}

HawkesParams load_hp_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open params file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return hp_params_from_json(buf.str());
}

}  // namespace sahp
