#include "sahp/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

namespace sahp {

using ad::Graph;
using ad::Mat;
using ad::Var;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw DataError("TrainConfig: learning_rate must be > 0");
    if (warmup_steps < 0) throw DataError("TrainConfig: warmup_steps must be >= 0");
    if (batch_size < 1) throw DataError("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw DataError("TrainConfig: max_epochs must be >= 1");
    if (!(early_stop_delta >= 0.0)) throw DataError("TrainConfig: early_stop_delta must be >= 0");
    if (patience < 0) throw DataError("TrainConfig: patience must be >= 0");
    if (mc_samples < 1) throw DataError("TrainConfig: mc_samples must be >= 1");
    if (workers < 1) throw DataError("TrainConfig: workers must be >= 1");
}

ad::Mat draw_mc_offsets(std::size_t num_intervals, int n, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("draw_mc_offsets: need at least one sample");
    Mat offsets(static_cast<Eigen::Index>(num_intervals), n);
    for (Eigen::Index k = 0; k < offsets.rows(); ++k) {
        for (int s = 0; s < n; ++s) {
            offsets(k, s) = (static_cast<double>(s) + rng.uniform01()) / static_cast<double>(n);
        }
    }
    return offsets;
}

namespace {

/// Interval lengths for the accounting window (t_1, T]: rows 0..L-2 are the
/// inter-event gaps, row L-1 reaches from the last event to the horizon.
Eigen::VectorXd interval_lengths(const Sequence& seq) {
    const auto L = static_cast<Eigen::Index>(seq.events.size());
    Eigen::VectorXd len(L);
    for (Eigen::Index k = 0; k + 1 < L; ++k) {
        len(k) = seq.events[static_cast<std::size_t>(k) + 1].time - seq.events[static_cast<std::size_t>(k)].time;
    }
    len(L - 1) = std::max(0.0, seq.horizon - seq.events.back().time);
    return len;
}

template <typename F>
void run_indexed(std::size_t n, int workers, F&& fn) {
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
    pool.reserve(static_cast<std::size_t>(count));
    for (int w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

Var sequence_nll_node(Graph& graph, const ParamVars& pv, const SAHPConfig& config, const Sequence& seq,
                      const Mat& mc_offsets, RngStream* dropout_rng, AttentionCapture* capture) {
    SequenceForward fwd = forward_sequence(graph, pv, config, seq, dropout_rng, capture);
    const auto L = static_cast<Eigen::Index>(seq.events.size());
    const int n = static_cast<int>(mc_offsets.cols());
    if (mc_offsets.rows() != L) throw std::invalid_argument("sequence_nll_node: offsets need one row per interval");

    const Eigen::VectorXd len = interval_lengths(seq);
    Mat lag_samples(L, n), mc_weights(L, n);
    for (Eigen::Index k = 0; k < L; ++k) {
        for (int s = 0; s < n; ++s) {
            lag_samples(k, s) = len(k) * mc_offsets(k, s);
            mc_weights(k, s) = len(k) / static_cast<double>(n);
        }
    }
    Var lags = graph.constant(std::move(lag_samples));
    Var weights = graph.constant(std::move(mc_weights));

    // Event-term selector: row k is 1 for the type of event k+1.
    Mat next_gap(L, 1);
    for (Eigen::Index k = 0; k + 1 < L; ++k) next_gap(k, 0) = len(k);
    next_gap(L - 1, 0) = 0.0;
    Var gap = graph.constant(std::move(next_gap));

    Var nll{};
    bool have_nll = false;
    auto add_term = [&](Var term, bool negate) {
        if (negate) term = ad::neg(term);
        nll = have_nll ? add(nll, term) : term;
        have_nll = true;
    };

    for (int u = 0; u < config.num_types; ++u) {
        const TypeIntensityVars& tv = fwd.per_type[static_cast<std::size_t>(u)];
        Var diff = sub(tv.eta, tv.mu);
        // Compensator samples on every interval.
        Var decayed = ad::exp(ad::neg(mul(bcast_col(tv.gamma, n), lags)));
        Var lambda_mc = ad::softplus(add(bcast_col(tv.mu, n), mul(bcast_col(diff, n), decayed)));
        add_term(sum_all(mul(weights, lambda_mc)), false);

        if (L >= 2) {
            Mat mask = Mat::Zero(L, 1);
            bool any = false;
            for (Eigen::Index k = 0; k + 1 < L; ++k) {
                if (seq.events[static_cast<std::size_t>(k) + 1].type == u) {
                    mask(k, 0) = 1.0;
                    any = true;
                }
            }
            if (any) {
                Var lambda_ev = ad::softplus(add(tv.mu, mul(diff, ad::exp(ad::neg(mul(tv.gamma, gap))))));
                add_term(sum_all(mul(graph.constant(std::move(mask)), ad::log(lambda_ev))), true);
            }
        }
    }
    return nll;
}

double mc_compensator_from_states(const std::vector<std::vector<IntensityState>>& states, const Sequence& seq,
                                  int n, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("mc_compensator: need at least one sample");
    if (seq.events.empty()) throw std::invalid_argument("mc_compensator: sequence needs at least one event");
    const Eigen::VectorXd len = interval_lengths(seq);
    const Mat offsets = draw_mc_offsets(seq.events.size(), n, rng);
    double total = 0.0;
    for (std::size_t k = 0; k < seq.events.size(); ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        double mean_lambda = 0.0;
        for (int s = 0; s < n; ++s) {
            const double t = seq.events[k].time + len(ki) * offsets(ki, s);
            for (const IntensityState& state : states[k]) mean_lambda += intensity_at(state, t);
        }
        total += len(ki) * mean_lambda / static_cast<double>(n);
    }
    return total;
}

double nll_from_states(const std::vector<std::vector<IntensityState>>& states, const Sequence& seq,
                       int n_samples, RngStream& rng) {
    if (seq.events.empty()) return 0.0;
    double nll = mc_compensator_from_states(states, seq, n_samples, rng);
    for (std::size_t i = 1; i < seq.events.size(); ++i) {
        const Event& ev = seq.events[i];
        const double lambda = intensity_at(states[i - 1][static_cast<std::size_t>(ev.type)], ev.time);
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
            throw NumericError("sequence_nll: non-finite intensity at event " + std::to_string(i));
        }
        nll -= std::log(lambda);
    }
    return nll;
}

double mc_compensator(const ModelParams& params, const SAHPConfig& config, const Sequence& seq, int n,
                      RngStream& rng) {
    if (seq.events.empty()) throw std::invalid_argument("mc_compensator: sequence needs at least one event");
    // The compensator is invariant under the change of time axis.
    const Sequence model_seq = scale_sequence_time(seq, config.time_rescale);
    return mc_compensator_from_states(sequence_states(params, config, model_seq), model_seq, n, rng);
}

double sequence_nll(const ModelParams& params, const SAHPConfig& config, const Sequence& seq, int n_samples,
                    RngStream& rng) {
    if (seq.events.empty()) return 0.0;
    const Sequence model_seq = scale_sequence_time(seq, config.time_rescale);
    const double model_nll = nll_from_states(sequence_states(params, config, model_seq), model_seq, n_samples, rng);
    const auto counted = seq.events.size() >= 2 ? seq.events.size() - 1 : 0;
    // lambda_data = r * lambda_model(r t): each event term shifts by log r.
    return model_nll - static_cast<double>(counted) * std::log(config.time_rescale);
}

NllWithGrad batch_nll_grad(const ModelParams& params, const SAHPConfig& config,
                           std::span<const Sequence* const> batch, int n_samples, RngStream mc_rng,
                           std::optional<RngStream> dropout_rng, int workers) {
    if (batch.empty()) throw std::invalid_argument("batch_nll_grad: empty batch");
    struct PerSeq {
        double nll = 0.0;
        std::size_t counted = 0;
        GradientMap grads;
    };
    std::vector<PerSeq> results(batch.size());
    const double log_rescale = std::log(config.time_rescale);
    run_indexed(batch.size(), workers, [&](std::size_t i) {
        const Sequence seq = scale_sequence_time(*batch[i], config.time_rescale);
        Graph graph;
        ParamVars pv = make_param_vars(graph, params, true);
        RngStream mc_stream = mc_rng.child("mc-seq", i);
        std::optional<RngStream> drop_stream;
        if (dropout_rng) drop_stream = dropout_rng->child("dropout-seq", i);
        const Mat offsets = draw_mc_offsets(seq.events.size(), n_samples, mc_stream);
        Var nll = sequence_nll_node(graph, pv, config, seq, offsets,
                                    drop_stream ? &*drop_stream : nullptr, nullptr);
        const double value = nll.value()(0, 0);
        if (!std::isfinite(value)) {
            throw NumericError("batch_nll_grad: non-finite loss at batch sequence " + std::to_string(i));
        }
        graph.backward(nll);
        PerSeq out;
        out.counted = seq.events.size() >= 2 ? seq.events.size() - 1 : 0;
        // report in data units; the shift is constant so gradients are shared
        out.nll = value - static_cast<double>(out.counted) * log_rescale;
        pv.for_each([&out](const std::string& name, Var v) { out.grads.emplace(name, v.grad()); });
        results[i] = std::move(out);
    });

    NllWithGrad total;
    for (PerSeq& r : results) {
        total.nll += r.nll;
        total.counted_events += r.counted;
        for (auto& [name, g] : r.grads) {
            auto it = total.grads.find(name);
            if (it == total.grads.end()) {
                total.grads.emplace(name, std::move(g));
            } else {
                it->second += g;
            }
        }
    }
    for (const auto& [name, g] : total.grads) {
        if (!g.allFinite()) throw NumericError("batch_nll_grad: non-finite gradient in " + name);
    }
    return total;
}

std::pair<double, std::size_t> dataset_nll(const ModelParams& params, const SAHPConfig& config,
                                           const Dataset& dataset, const std::vector<std::size_t>& indices,
                                           int n_samples, std::uint64_t seed, int workers) {
    std::vector<double> nll(indices.size(), 0.0);
    std::vector<std::size_t> counted(indices.size(), 0);
    RngStream base(seed);
    run_indexed(indices.size(), workers, [&](std::size_t i) {
        const Sequence& seq = dataset.sequences[indices[i]];
        RngStream rng = base.child("eval-mc", indices[i]);
        nll[i] = sequence_nll(params, config, seq, n_samples, rng);
        counted[i] = seq.events.size() >= 2 ? seq.events.size() - 1 : 0;
    });
    double total = 0.0;
    std::size_t events = 0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        total += nll[i];
        events += counted[i];
    }
    return {total, events};
}

double warmup_learning_rate(double base_lr, int step, int warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

namespace {

struct AdamState {
    GradientMap m, v;
    int step = 0;
};

void adam_step(ModelParams& params, GradientMap& grads, AdamState& state, double lr, double clip_norm) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double sq_norm = 0.0;
    for (const auto& [name, g] : grads) sq_norm += g.squaredNorm();
    const double norm = std::sqrt(sq_norm);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const double factor = clip_norm / norm;
        for (auto& [name, g] : grads) g *= factor;
    }
    state.step += 1;
    const double bias1 = 1.0 - std::pow(beta1, state.step);
    const double bias2 = 1.0 - std::pow(beta2, state.step);
    params.for_each_trainable([&](const std::string& name, Mat& theta) {
        const Mat& g = grads.at(name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Mat::Zero(g.rows(), g.cols())).first;
            state.v.emplace(name, Mat::Zero(g.rows(), g.cols()));
        }
        Mat& m = mit->second;
        Mat& v = state.v.at(name);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        const Mat m_hat = m / bias1;
        const Mat v_hat = v / bias2;
        theta -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
    });
}

}  // namespace

TrainResult train(const SAHPConfig& model_config, const ModelParams& init, const Dataset& dataset,
                  const TrainConfig& config) {
    model_config.validate();
    config.validate();
    if (dataset.num_types != model_config.num_types) {
        throw DataError("train: dataset and model disagree on the number of types");
    }
    auto train_indices = dataset.indices_of(Split::train);
    auto val_indices = dataset.indices_of(Split::val);
    // Sequences shorter than two events cannot form a query/history pair.
    std::erase_if(train_indices, [&](std::size_t i) { return dataset.sequences[i].size() < 2; });
    if (train_indices.empty()) throw DataError("train: empty training split");
    if (val_indices.empty()) throw DataError("train: empty validation split");

    RngStream root(config.seed);
    const std::uint64_t val_seed = splitmix64(config.seed ^ 0x76616c6dULL);  // fixed per run

    TrainResult result;
    result.params = init;
    ModelParams params = init;

    auto eval_split = [&](const std::vector<std::size_t>& idx) {
        auto [nll, events] = dataset_nll(params, model_config, dataset, idx, config.mc_samples, val_seed,
                                         config.workers);
        return events > 0 ? nll / static_cast<double>(events) : nll;
    };

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    // Epoch 0: evaluation of the starting point, before any update.
    {
        EpochLog log;
        log.epoch = 0;
        log.step = 0;
        log.train_nll_per_event = eval_split(train_indices);
        log.val_nll_per_event = eval_split(val_indices);
        log.learning_rate = 0.0;
        log.wall_time_sec = elapsed();
        result.history.push_back(log);
        result.best_val_nll_per_event = log.val_nll_per_event;
        result.best_epoch = 0;
    }

    AdamState adam;
    int global_step = 0;
    double best_for_delta = result.history.front().val_nll_per_event;
    double best_strict = best_for_delta;
    int bad_epochs = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::vector<std::size_t> order = train_indices;
        root.child("shuffle", static_cast<std::uint64_t>(epoch)).shuffle(order);

        double epoch_nll = 0.0;
        std::size_t epoch_events = 0;
        double lr_now = 0.0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
            std::vector<const Sequence*> batch;
            batch.reserve(end - at);
            for (std::size_t i = at; i < end; ++i) batch.push_back(&dataset.sequences[order[i]]);
            global_step += 1;
            RngStream mc_rng = root.child("mc", static_cast<std::uint64_t>(global_step));
            std::optional<RngStream> drop_rng;
            if (model_config.dropout_rate > 0.0) {
                drop_rng = root.child("dropout", static_cast<std::uint64_t>(global_step));
            }
            NllWithGrad batch_grad;
            try {
                batch_grad = batch_nll_grad(params, model_config, batch, config.mc_samples, mc_rng,
                                            drop_rng, config.workers);
            } catch (const NumericError& e) {
                throw NumericError("train: " + std::string(e.what()) + " at step " +
                                   std::to_string(global_step));
            }
            const double denom = batch_grad.counted_events > 0 ? static_cast<double>(batch_grad.counted_events) : 1.0;
            for (auto& [name, g] : batch_grad.grads) g /= denom;
            lr_now = warmup_learning_rate(config.learning_rate, global_step, config.warmup_steps);
            adam_step(params, batch_grad.grads, adam, lr_now, config.grad_clip_norm);
            epoch_nll += batch_grad.nll;
            epoch_events += batch_grad.counted_events;
        }

        const double val_nll = eval_split(val_indices);
        EpochLog log;
        log.epoch = epoch;
        log.step = global_step;
        log.train_nll_per_event = epoch_events > 0 ? epoch_nll / static_cast<double>(epoch_events) : 0.0;
        log.val_nll_per_event = val_nll;
        log.learning_rate = lr_now;
        log.wall_time_sec = elapsed();
        result.history.push_back(log);

        if (val_nll < best_strict) {
            best_strict = val_nll;
            result.params = params;
            result.best_val_nll_per_event = val_nll;
            result.best_epoch = epoch;
        }
        if (val_nll < best_for_delta - config.early_stop_delta) {
            best_for_delta = val_nll;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if (bad_epochs > config.patience) {
                result.early_stopped = true;
                result.total_steps = global_step;
                return result;
            }
        }
    }
    result.total_steps = global_step;
    return result;
}

void write_history_csv(const std::vector<EpochLog>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open history file for writing: " + path.string());
    out << "epoch,step,train_nll_per_event,val_nll_per_event,learning_rate,wall_time\n";
    out.precision(17);
    for (const EpochLog& log : history) {
        out << log.epoch << ',' << log.step << ',' << log.train_nll_per_event << ','
            << log.val_nll_per_event << ',' << log.learning_rate << ',' << log.wall_time_sec << "\n";
    }
}

}  // namespace sahp
