#include "sahp/hawkes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sahp/rng.hpp"

namespace sahp {

namespace detail {
nlohmann::json kernel_to_json_obj(const KernelSpec& spec);
KernelSpec kernel_from_json_obj(const nlohmann::json& j);
}  // namespace detail

void HawkesSpec::validate() const {
    if (num_types < 1) throw DataError("HawkesSpec: num_types must be >= 1");
    if (static_cast<int>(base.size()) != num_types) throw DataError("HawkesSpec: base size must equal num_types");
    for (double mu : base) {
        if (!std::isfinite(mu) || mu < 0.0) throw DataError("HawkesSpec: base rates must be finite and >= 0");
    }
    if (static_cast<int>(kernels.size()) != num_types) throw DataError("HawkesSpec: kernel matrix must be U x U");
    for (const auto& row : kernels) {
        if (static_cast<int>(row.size()) != num_types) throw DataError("HawkesSpec: kernel matrix must be U x U");
        for (const auto& k : row) validate_kernel(k);
    }
}

double true_intensity(const HawkesSpec& spec, std::span<const Event> history, double t, int u) {
    if (u < 0 || u >= spec.num_types) throw std::invalid_argument("true_intensity: type out of range");
    double lambda = spec.base[static_cast<std::size_t>(u)];
    for (const Event& ev : history) {
        if (!(ev.time < t)) throw std::invalid_argument("true_intensity: history must be strictly before t");
        lambda += kernel_eval(spec.kernels[static_cast<std::size_t>(u)][static_cast<std::size_t>(ev.type)],
                              t - ev.time);
    }
    return lambda;
}

namespace {

double total_intensity(const HawkesSpec& spec, const std::vector<Event>& history, double t,
                       std::vector<double>& per_type) {
    const auto u_count = static_cast<std::size_t>(spec.num_types);
    per_type.assign(u_count, 0.0);
    for (std::size_t u = 0; u < u_count; ++u) per_type[u] = spec.base[u];
    for (const Event& ev : history) {
        const double lag = t - ev.time;
        for (std::size_t u = 0; u < u_count; ++u) {
            per_type[u] += kernel_eval(spec.kernels[u][static_cast<std::size_t>(ev.type)], lag);
        }
    }
    double total = 0.0;
    for (double v : per_type) total += v;
    return total;
}

double dominating_bound(const HawkesSpec& spec, const std::vector<Event>& history, double s) {
    double bound = 0.0;
    const auto u_count = static_cast<std::size_t>(spec.num_types);
    for (std::size_t u = 0; u < u_count; ++u) bound += spec.base[u];
    for (const Event& ev : history) {
        const double delta = s - ev.time;
        for (std::size_t u = 0; u < u_count; ++u) {
            bound += kernel_sup_tail(spec.kernels[u][static_cast<std::size_t>(ev.type)], delta);
        }
    }
    return bound;
}

}  // namespace

Sequence simulate_thinning(const HawkesSpec& spec, double horizon, std::uint64_t seed) {
    spec.validate();
    if (!(horizon > 0.0)) throw std::invalid_argument("simulate_thinning: horizon must be positive");
    RngStream rng(seed);
    Sequence seq;
    seq.horizon = horizon;
    double s = 0.0;
    std::vector<double> per_type;
    while (true) {
        const double bound = dominating_bound(spec, seq.events, s);
        if (bound <= 0.0) break;
        s += rng.exponential(bound);
        if (s >= horizon) break;
        const double lambda = total_intensity(spec, seq.events, s, per_type);
        if (rng.uniform01() * bound < lambda) {
            const auto type = static_cast<int>(rng.categorical(per_type));
            seq.events.push_back(Event{type, s});
        }
        // Bound is recomputed at the top of the loop after acceptances and
        // rejections alike; the sup tails only shrink as s advances.
    }
    return seq;
}

std::vector<std::vector<double>> intensity_trace(const HawkesSpec& spec, const Sequence& seq,
                                                 std::span<const double> grid) {
    spec.validate();
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (grid[i] < grid[i - 1]) throw std::invalid_argument("intensity_trace: grid must be sorted");
    }
    const auto u_count = static_cast<std::size_t>(spec.num_types);
    std::vector<std::vector<double>> trace(u_count, std::vector<double>(grid.size(), 0.0));
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double t = grid[g];
        // Left limit: events at exactly t are excluded.
        auto end = std::lower_bound(seq.events.begin(), seq.events.end(), t,
                                    [](const Event& ev, double value) { return ev.time < value; });
        std::span<const Event> history(seq.events.data(),
                                       static_cast<std::size_t>(std::distance(seq.events.begin(), end)));
        for (std::size_t u = 0; u < u_count; ++u) {
            trace[u][g] = true_intensity(spec, history, t, static_cast<int>(u));
        }
    }
    return trace;
}

std::pair<double, std::size_t> true_windowed_nll(const HawkesSpec& spec, const Sequence& seq,
                                                 int points_per_interval) {
    if (seq.events.empty()) return {0.0, 0};
    double nll = 0.0;
    for (std::size_t i = 1; i < seq.events.size(); ++i) {
        std::span<const Event> history(seq.events.data(), i);
        const double lambda = true_intensity(spec, history, seq.events[i].time, seq.events[i].type);
        if (!(lambda > 0.0)) throw NumericError("true_windowed_nll: non-positive intensity at an event");
        nll -= std::log(lambda);
    }
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        const double a = seq.events[k].time;
        const double b = k + 1 < seq.events.size() ? seq.events[k + 1].time : seq.horizon;
        if (b <= a) continue;
        const double h = (b - a) / points_per_interval;
        std::span<const Event> history(seq.events.data(), k + 1);
        double acc = 0.0;
        for (int j = 0; j <= points_per_interval; ++j) {
            // open the interval just past the event so history stays strict
            const double t = a + h * j + (j == 0 ? 1e-12 * std::max(1.0, std::abs(a)) : 0.0);
            double lambda = 0.0;
            for (int u = 0; u < spec.num_types; ++u) lambda += true_intensity(spec, history, t, u);
            acc += (j == 0 || j == points_per_interval) ? 0.5 * lambda : lambda;
        }
        nll += acc * h;
    }
    return {nll, seq.events.size() - 1};
}

std::string hawkes_spec_to_json(const HawkesSpec& spec) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : spec.kernels) {
        nlohmann::json jrow = nlohmann::json::array();
        for (const auto& k : row) jrow.push_back(detail::kernel_to_json_obj(k));
        rows.push_back(std::move(jrow));
    }
    nlohmann::json j{{"num_types", spec.num_types}, {"base", spec.base}, {"kernels", std::move(rows)}};
    return j.dump(2) + "\n";
}

HawkesSpec hawkes_spec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("Hawkes spec JSON parse error: ") + e.what());
    }
    HawkesSpec spec;
    spec.num_types = j.at("num_types").get<int>();
    spec.base = j.at("base").get<std::vector<double>>();
    for (const auto& jrow : j.at("kernels")) {
        std::vector<KernelSpec> row;
        for (const auto& jk : jrow) row.push_back(detail::kernel_from_json_obj(jk));
        spec.kernels.push_back(std::move(row));
    }
    spec.validate();
    return spec;
}

HawkesSpec load_hawkes_spec(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open Hawkes spec file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return hawkes_spec_from_json(buf.str());
}

void save_hawkes_spec(const HawkesSpec& spec, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out << hawkes_spec_to_json(spec);
}

HawkesSpec benchmark_two_type_spec() {
    HawkesSpec spec;
    spec.num_types = 2;
    spec.base = {0.1, 0.2};
    spec.kernels = {
        {kernels::PowerLaw{0.2, 0.5, 1.3}, kernels::Exponential{0.03, 0.3}},
        {kernels::SumExponential{{{0.05, 0.2}, {0.16, 0.8}}}, kernels::BoundedSine{8.0, 4.0}},
    };
    return spec;
}

}  // namespace sahp
