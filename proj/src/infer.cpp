#include "sahp/infer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "sahp/train.hpp"

namespace sahp {

QuadratureConfig QuadratureConfig::refined(double factor) const {
    QuadratureConfig out = *this;
    out.first_step_fraction /= factor;
    out.growth = std::pow(growth, 1.0 / factor);
    out.max_points = static_cast<int>(static_cast<double>(max_points) * factor);
    return out;
}

double integrate_total_intensity(const TypedIntensity& lambda, int num_types, double t_start, double t_end) {
    if (t_end < t_start) throw std::invalid_argument("integrate_total_intensity: t_end before t_start");
    if (t_end == t_start) return 0.0;
    auto total = [&](double t) {
        double v = 0.0;
        for (int u = 0; u < num_types; ++u) v += lambda(u, t);
        return v;
    };
    // Trapezoid with doubling until stable.
    int n = 64;
    double prev = std::numeric_limits<double>::infinity();
    for (int round = 0; round < 16; ++round) {
        const double h = (t_end - t_start) / n;
        double acc = 0.5 * (total(t_start) + total(t_end));
        for (int i = 1; i < n; ++i) acc += total(t_start + h * i);
        acc *= h;
        if (std::abs(acc - prev) <= 1e-10 * (1.0 + std::abs(acc))) return acc;
        prev = acc;
        n *= 2;
    }
    return prev;
}

double density_from_intensity(const TypedIntensity& lambda, int num_types, double t_start, double t) {
    if (!(t > t_start)) throw std::invalid_argument("density: t must be after the interval start");
    double total = 0.0;
    for (int u = 0; u < num_types; ++u) total += lambda(u, t);
    return total * std::exp(-integrate_total_intensity(lambda, num_types, t_start, t));
}

PredictionResult predict_from_intensity(const TypedIntensity& lambda, int num_types, double t_start,
                                        const QuadratureConfig& quad) {
    auto total = [&](double t) {
        double v = 0.0;
        for (int u = 0; u < num_types; ++u) v += lambda(u, t);
        return v;
    };
    const double lambda0 = total(t_start);
    if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) {
        throw NumericError("predict: non-positive intensity at the interval start");
    }
    double h = quad.first_step_fraction / lambda0;

    // Walk the geometric grid, accumulating the compensator integral, the
    // captured mass, the time expectation and per-type mass splits.
    double t_prev = t_start;
    double lam_prev = lambda0;
    double integral = 0.0;
    double survival = 1.0;
    double p_prev = lambda0;  // survival = 1 at the start
    double tp_prev = t_start * p_prev;
    std::vector<double> ratio_prev(static_cast<std::size_t>(num_types));
    for (int u = 0; u < num_types; ++u) ratio_prev[static_cast<std::size_t>(u)] = lambda(u, t_start) / lambda0 * p_prev;

    double mass = 0.0, t_mass = 0.0;
    std::vector<double> scores(static_cast<std::size_t>(num_types), 0.0);

    int points = 0;
    while (survival >= quad.survival_cutoff) {
        if (++points > quad.max_points) {
            throw NumericError("predict: survival cutoff not reached within the point budget");
        }
        const double t = t_prev + h;
        const double lam = total(t);
        integral += 0.5 * (lam_prev + lam) * h;
        survival = std::exp(-integral);
        const double p = lam * survival;
        const double tp = t * p;
        mass += 0.5 * (p_prev + p) * h;
        t_mass += 0.5 * (tp_prev + tp) * h;
        for (int u = 0; u < num_types; ++u) {
            const double ratio = lam > 0.0 ? lambda(u, t) / lam * p : 0.0;
            scores[static_cast<std::size_t>(u)] += 0.5 * (ratio_prev[static_cast<std::size_t>(u)] + ratio) * h;
            ratio_prev[static_cast<std::size_t>(u)] = ratio;
        }
        t_prev = t;
        lam_prev = lam;
        p_prev = p;
        tp_prev = tp;
        h *= quad.growth;
    }

    PredictionResult result;
    result.captured_mass = mass;
    result.predicted_time = t_mass / mass;
    const double score_sum = std::accumulate(scores.begin(), scores.end(), 0.0);
    result.type_scores.resize(scores.size());
    for (std::size_t u = 0; u < scores.size(); ++u) result.type_scores[u] = scores[u] / score_sum;
    result.predicted_type = 0;
    for (std::size_t u = 1; u < scores.size(); ++u) {
        if (result.type_scores[u] > result.type_scores[static_cast<std::size_t>(result.predicted_type)]) {
            result.predicted_type = static_cast<int>(u);
        }
    }
    return result;
}

TypedIntensity states_intensity(std::vector<IntensityState> states) {
    return [states = std::move(states)](int u, double t) {
        return intensity_at(states[static_cast<std::size_t>(u)], t);
    };
}

namespace {

std::vector<IntensityState> model_axis_states(const ModelParams& params, const SAHPConfig& config,
                                              std::span<const Event> prefix) {
    if (prefix.empty()) throw std::invalid_argument("model forward: empty prefix");
    Sequence scaled;
    scaled.events.assign(prefix.begin(), prefix.end());
    scaled.horizon = prefix.back().time;
    scaled = scale_sequence_time(scaled, config.time_rescale);
    return all_type_intensity_states(params, config, scaled.events);
}

}  // namespace

double next_event_density(const ModelParams& params, const SAHPConfig& config, std::span<const Event> prefix,
                          double t) {
    auto states = model_axis_states(params, config, prefix);
    const double start = prefix.back().time;
    if (!(t > start)) throw std::invalid_argument("next_event_density: t must exceed the last prefix time");
    const double r = config.time_rescale;
    // p_data(t) = r * p_model(r t)
    return r * density_from_intensity(states_intensity(std::move(states)), config.num_types, r * start, r * t);
}

PredictionResult predict_next(const ModelParams& params, const SAHPConfig& config,
                              std::span<const Event> prefix, const QuadratureConfig& quad) {
    auto states = model_axis_states(params, config, prefix);
    const double r = config.time_rescale;
    PredictionResult result = predict_from_intensity(states_intensity(std::move(states)), config.num_types,
                                                     r * prefix.back().time, quad);
    result.predicted_time /= r;
    return result;
}

namespace {

double empirical_quantile(const std::vector<double>& sorted, double percentile) {
    const auto n = sorted.size();
    if (n == 1) return sorted.front();
    const double h = (percentile / 100.0) * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <typename F>
void run_indexed_infer(std::size_t n, int workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(workers, static_cast<int>(n));
    for (int w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::vector<std::pair<double, double>> qq_data(std::span<const double> true_values,
                                               std::span<const double> estimated_values,
                                               std::span<const double> percentiles) {
    if (true_values.empty() || estimated_values.empty()) {
        throw std::invalid_argument("qq_data: samples must be non-empty");
    }
    std::vector<double> a(true_values.begin(), true_values.end());
    std::vector<double> b(estimated_values.begin(), estimated_values.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::pair<double, double>> out;
    out.reserve(percentiles.size());
    double prev = 0.0;
    for (double p : percentiles) {
        if (!(p > 0.0 && p < 100.0)) throw std::invalid_argument("qq_data: percentile out of (0, 100)");
        if (!out.empty() && p <= prev) throw std::invalid_argument("qq_data: percentiles must be sorted");
        prev = p;
        out.emplace_back(empirical_quantile(a, p), empirical_quantile(b, p));
    }
    return out;
}

AttentionMapResult attention_map(const ModelParams& params, const SAHPConfig& config, const Dataset& dataset,
                                 const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("attention_map: empty split");
    const auto u_count = static_cast<std::size_t>(config.num_types);
    std::vector<std::vector<double>> acc(u_count, std::vector<double>(u_count, 0.0));
    std::vector<std::vector<std::size_t>> count(u_count, std::vector<std::size_t>(u_count, 0));
    const double stream_scale = 1.0 / static_cast<double>(config.num_layers * config.num_heads);

    for (std::size_t idx : indices) {
        const Sequence& seq = dataset.sequences[idx];
        if (seq.events.size() < 2) continue;
        AttentionCapture capture;
        sequence_states(params, config, scale_sequence_time(seq, config.time_rescale), &capture);
        for (std::size_t k = 0; k + 1 < seq.events.size(); ++k) {
            const auto u = static_cast<std::size_t>(seq.events[k + 1].type);
            for (std::size_t j = 0; j <= k; ++j) {
                const auto v = static_cast<std::size_t>(seq.events[j].type);
                double w = 0.0;
                for (const auto& layer : capture.weights[u]) {
                    for (const ad::Mat& head : layer) {
                        w += head(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
                    }
                }
                acc[u][v] += w * stream_scale;
                count[u][v] += 1;
            }
        }
    }

    AttentionMapResult result;
    result.map.assign(u_count, std::vector<double>(u_count, 0.0));
    for (std::size_t u = 0; u < u_count; ++u) {
        double row_sum = 0.0;
        for (std::size_t v = 0; v < u_count; ++v) {
            if (count[u][v] > 0) result.map[u][v] = acc[u][v] / static_cast<double>(count[u][v]);
            row_sum += result.map[u][v];
        }
        if (row_sum > 0.0) {
            for (std::size_t v = 0; v < u_count; ++v) result.map[u][v] /= row_sum;
        } else {
            for (std::size_t v = 0; v < u_count; ++v) result.map[u][v] = 1.0 / static_cast<double>(u_count);
            result.uniform_rows.push_back(static_cast<int>(u));
        }
    }
    return result;
}

EvalReport evaluate(const ModelParams& params, const SAHPConfig& config, const Dataset& dataset,
                    const std::vector<std::size_t>& indices, const EvalOptions& options,
                    const HawkesSpec* truth) {
    if (indices.empty()) throw DataError("evaluate: empty split");
    const auto u_count = static_cast<std::size_t>(config.num_types);

    struct PerSeq {
        double nll = 0.0;
        std::size_t counted = 0;
        std::vector<std::size_t> tp, fp, fn;
        double sq_err_sum = 0.0;
        std::size_t predictions = 0;
        std::size_t skipped = 0;
        std::vector<std::vector<double>> est_intensity;   // per type, at event times 2..L
        std::vector<std::vector<double>> true_intensity;  // per type
    };
    std::vector<PerSeq> rows(indices.size());

    RngStream base(options.seed);
    run_indexed_infer(indices.size(), options.workers, [&](std::size_t i) {
        const Sequence& seq = dataset.sequences[indices[i]];
        PerSeq& row = rows[i];
        row.tp.assign(u_count, 0);
        row.fp.assign(u_count, 0);
        row.fn.assign(u_count, 0);
        row.est_intensity.assign(u_count, {});
        row.true_intensity.assign(u_count, {});
        if (seq.events.empty()) return;

        const double r = config.time_rescale;
        const Sequence model_seq = scale_sequence_time(seq, r);
        auto states = sequence_states(params, config, model_seq);
        RngStream rng = base.child("eval-mc", indices[i]);
        row.counted = seq.events.size() >= 2 ? seq.events.size() - 1 : 0;
        row.nll = nll_from_states(states, model_seq, options.n_mc, rng) -
                  static_cast<double>(row.counted) * std::log(r);

        for (std::size_t k = 0; k + 1 < model_seq.events.size(); ++k) {
            const Event& next = model_seq.events[k + 1];
            PredictionResult pred = predict_from_intensity(states_intensity(states[k]), config.num_types,
                                                           model_seq.events[k].time, options.quad);
            const auto truth_type = static_cast<std::size_t>(next.type);
            const auto pred_type = static_cast<std::size_t>(pred.predicted_type);
            if (pred_type == truth_type) {
                row.tp[truth_type] += 1;
            } else {
                row.fp[pred_type] += 1;
                row.fn[truth_type] += 1;
            }
            // the scaled error is a ratio of gaps, so the time axis cancels
            const double true_gap = next.time - model_seq.events[k].time;
            if (true_gap > 0.0) {
                const double eps = ((pred.predicted_time - model_seq.events[k].time) - true_gap) / true_gap;
                row.sq_err_sum += eps * eps;
                row.predictions += 1;
            } else {
                row.skipped += 1;
            }
            for (std::size_t u = 0; u < u_count; ++u) {
                row.est_intensity[u].push_back(r * intensity_at(states[k][u], next.time));
            }
        }
        if (truth && seq.events.size() >= 2) {
            std::vector<double> grid;
            grid.reserve(seq.events.size() - 1);
            for (std::size_t k = 1; k < seq.events.size(); ++k) grid.push_back(seq.events[k].time);
            auto trace = intensity_trace(*truth, seq, grid);
            for (std::size_t u = 0; u < u_count; ++u) row.true_intensity[u] = std::move(trace[u]);
        }
    });

    EvalReport report;
    double nll_total = 0.0;
    std::vector<std::size_t> tp(u_count, 0), fp(u_count, 0), fn(u_count, 0);
    double sq_err = 0.0;
    std::vector<std::vector<double>> est(u_count), tru(u_count);
    for (const PerSeq& row : rows) {
        nll_total += row.nll;
        report.counted_events += row.counted;
        report.predictions += row.predictions;
        report.skipped_zero_intervals += row.skipped;
        sq_err += row.sq_err_sum;
        for (std::size_t u = 0; u < u_count; ++u) {
            tp[u] += row.tp[u];
            fp[u] += row.fp[u];
            fn[u] += row.fn[u];
            est[u].insert(est[u].end(), row.est_intensity[u].begin(), row.est_intensity[u].end());
            tru[u].insert(tru[u].end(), row.true_intensity[u].begin(), row.true_intensity[u].end());
        }
    }
    if (report.counted_events == 0) throw DataError("evaluate: no counted events in the split");
    report.nll_per_event = nll_total / static_cast<double>(report.counted_events);

    double f1_sum = 0.0;
    for (std::size_t u = 0; u < u_count; ++u) {
        // F1 = 2 TP / (2 TP + FP + FN); types absent from both truth and
        // predictions contribute zero and stay in the mean.
        const double denom = static_cast<double>(2 * tp[u] + fp[u] + fn[u]);
        f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[u]) / denom : 0.0;
    }
    report.macro_f1 = f1_sum / static_cast<double>(u_count);
    report.rmse_scaled = report.predictions > 0 ? std::sqrt(sq_err / static_cast<double>(report.predictions)) : 0.0;

    std::vector<double> percentiles = options.qq_percentiles;
    if (percentiles.empty()) {
        for (int p = 1; p <= 99; ++p) percentiles.push_back(static_cast<double>(p));
    }
    if (truth) {
        report.qq_pairs.resize(u_count);
        for (std::size_t u = 0; u < u_count; ++u) {
            if (!tru[u].empty() && !est[u].empty()) {
                report.qq_pairs[u] = qq_data(tru[u], est[u], percentiles);
            }
        }
    }

    AttentionMapResult attn = attention_map(params, config, dataset, indices);
    report.attention_map = std::move(attn.map);
    report.attention_uniform_rows = std::move(attn.uniform_rows);
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    nlohmann::json qq = nlohmann::json::array();
    for (const auto& per_type : report.qq_pairs) {
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& [qt, qe] : per_type) pairs.push_back({qt, qe});
        qq.push_back(std::move(pairs));
    }
    nlohmann::json j{{"nll_per_event", report.nll_per_event},
                     {"macro_f1", report.macro_f1},
                     {"rmse_scaled", report.rmse_scaled},
                     {"counted_events", report.counted_events},
                     {"predictions", report.predictions},
                     {"skipped_zero_intervals", report.skipped_zero_intervals},
                     {"qq_pairs", std::move(qq)},
                     {"attention_map", report.attention_map},
                     {"attention_uniform_rows", report.attention_uniform_rows}};
    return j.dump(2) + "\n";
}

void save_eval_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open report file for writing: " + path.string());
    out << eval_report_to_json(report);
}

void write_qq_csv(const EvalReport& report, const std::vector<double>& percentiles,
                  const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open QQ file for writing: " + path.string());
    out.precision(17);
    out << "type,percentile,q_true,q_est\n";
    for (std::size_t u = 0; u < report.qq_pairs.size(); ++u) {
        for (std::size_t i = 0; i < report.qq_pairs[u].size(); ++i) {
            out << u << ',' << percentiles[i] << ',' << report.qq_pairs[u][i].first << ','
                << report.qq_pairs[u][i].second << "\n";
        }
    }
}

void write_attention_csv(const std::vector<std::vector<double>>& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open attention file for writing: " + path.string());
    out.precision(17);
    for (const auto& row : map) {
        for (std::size_t v = 0; v < row.size(); ++v) out << (v ? "," : "") << row[v];
        out << "\n";
    }
}

}  // namespace sahp
