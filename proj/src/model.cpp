#include "sahp/model.hpp"

#include <cmath>

namespace sahp {

using ad::Graph;
using ad::Mat;
using ad::Var;

std::string to_string(EncodingMode mode) {
    return mode == EncodingMode::time_shifted ? "time_shifted" : "conventional";
}

EncodingMode encoding_mode_from_string(const std::string& s) {
    if (s == "time_shifted") return EncodingMode::time_shifted;
    if (s == "conventional") return EncodingMode::conventional;
    throw DataError("unknown encoding mode: " + s);
}

void SAHPConfig::validate() const {
    if (num_types < 1) throw DataError("SAHPConfig: num_types must be >= 1");
    if (model_dim < 2 || model_dim % 2 != 0) throw DataError("SAHPConfig: model_dim must be even and >= 2");
    if (num_heads < 1 || model_dim % num_heads != 0) {
        throw DataError("SAHPConfig: num_heads must divide model_dim");
    }
    if (num_layers < 1) throw DataError("SAHPConfig: num_layers must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DataError("SAHPConfig: dropout_rate must be in [0,1)");
    if (!(time_rescale > 0.0) || !std::isfinite(time_rescale)) {
        throw DataError("SAHPConfig: time_rescale must be positive and finite");
    }
}

Sequence scale_sequence_time(const Sequence& seq, double factor) {
    Sequence out = seq;
    for (Event& ev : out.events) ev.time *= factor;
    out.horizon *= factor;
    return out;
}

void ModelParams::for_each_trainable(const std::function<void(const std::string&, ad::Mat&)>& fn) {
    fn("type_embedding", type_embedding);
    fn("time_scale", time_scale);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        for (std::size_t h = 0; h < layers[l].heads.size(); ++h) {
            const std::string hp = prefix + "heads." + std::to_string(h) + ".";
            fn(hp + "wq", layers[l].heads[h].wq);
            fn(hp + "wk", layers[l].heads[h].wk);
            fn(hp + "wv", layers[l].heads[h].wv);
        }
        fn(prefix + "wo", layers[l].wo);
        fn(prefix + "ff_w1", layers[l].ff_w1);
        fn(prefix + "ff_b1", layers[l].ff_b1);
        fn(prefix + "ff_w2", layers[l].ff_w2);
        fn(prefix + "ff_b2", layers[l].ff_b2);
    }
    fn("head_mu", head_mu);
    fn("head_eta", head_eta);
    fn("head_gamma", head_gamma);
}

void ModelParams::for_each_trainable(const std::function<void(const std::string&, const ad::Mat&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each_trainable(
        [&fn](const std::string& name, ad::Mat& m) { fn(name, m); });
}

Eigen::VectorXd default_angular_freq(int model_dim) {
    Eigen::VectorXd omega(model_dim);
    for (int k = 0; k < model_dim; ++k) {
        const double exponent = 2.0 * static_cast<double>(k / 2) / static_cast<double>(model_dim);
        omega(k) = std::pow(10000.0, -exponent);
    }
    return omega;
}

ModelParams init_params(const SAHPConfig& config, std::uint64_t seed) {
    config.validate();
    const int K = config.model_dim;
    const int dh = config.head_dim();
    ModelParams params;
    params.type_embedding = Mat::Zero(config.num_types, K);
    params.angular_freq = default_angular_freq(K);
    params.time_scale = Mat::Zero(K, 1);
    params.layers.resize(static_cast<std::size_t>(config.num_layers));
    for (auto& layer : params.layers) {
        layer.heads.resize(static_cast<std::size_t>(config.num_heads));
        for (auto& head : layer.heads) {
            head.wq = Mat::Zero(K, dh);
            head.wk = Mat::Zero(K, dh);
            head.wv = Mat::Zero(K, dh);
        }
        layer.wo = Mat::Zero(K, K);
        layer.ff_w1 = Mat::Zero(K, 4 * K);
        layer.ff_b1 = Mat::Zero(1, 4 * K);
        layer.ff_w2 = Mat::Zero(4 * K, K);
        layer.ff_b2 = Mat::Zero(1, K);
    }
    params.head_mu = Mat::Zero(K, 1);
    params.head_eta = Mat::Zero(K, 1);
    params.head_gamma = Mat::Zero(K, 1);

    RngStream rng = RngStream(seed).child("param-init");
    params.for_each_trainable([&](const std::string& name, Mat& m) {
        if (name == "time_scale") {
            for (int k = 0; k < K; ++k) m(k, 0) = params.angular_freq(k);
            return;
        }
        if (name.ends_with("ff_b1") || name.ends_with("ff_b2")) return;  // biases start at zero
        const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
        }
    });
    return params;
}

double intensity_at(const IntensityState& state, double t) {
    if (t < state.interval_start) throw std::invalid_argument("intensity_at: t before interval start");
    const double decayed = std::exp(-state.gamma * (t - state.interval_start));
    return ad::softplus_value(state.mu + (state.eta - state.mu) * decayed);
}

Eigen::VectorXd positional_encoding(const ModelParams& params, const SAHPConfig& config, int position,
                                    double t) {
    if (position < 0) throw std::invalid_argument("positional_encoding: position must be >= 0");
    if (t < 0.0) throw std::invalid_argument("positional_encoding: time must be >= 0");
    const int K = config.model_dim;
    Eigen::VectorXd pe(K);
    for (int k = 0; k < K; ++k) {
        double phase = params.angular_freq(k) * static_cast<double>(position);
        if (config.encoding_mode == EncodingMode::time_shifted) phase += params.time_scale(k, 0) * t;
        pe(k) = (k % 2 == 0) ? std::sin(phase) : std::cos(phase);
    }
    return pe;
}

Eigen::VectorXd embed_event(const ModelParams& params, const SAHPConfig& config, int type, int position,
                            double t) {
    if (type < 0 || type >= config.num_types) throw std::invalid_argument("embed_event: type out of range");
    Eigen::VectorXd x = positional_encoding(params, config, position, t);
    x += params.type_embedding.row(type).transpose();
    return x;
}

IntensityState intensity_params(const ModelParams& params, const Eigen::VectorXd& h) {
    IntensityState state;
    state.mu = ad::gelu_value(h.dot(params.head_mu.col(0)));
    state.eta = ad::gelu_value(h.dot(params.head_eta.col(0)));
    state.gamma = ad::softplus_value(h.dot(params.head_gamma.col(0)));
    return state;
}

void ParamVars::for_each(const std::function<void(const std::string&, ad::Var)>& fn) const {
    fn("type_embedding", type_embedding);
    fn("time_scale", time_scale);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layers." + std::to_string(l) + ".";
        for (std::size_t h = 0; h < layers[l].heads.size(); ++h) {
            const std::string hp = prefix + "heads." + std::to_string(h) + ".";
            fn(hp + "wq", layers[l].heads[h].wq);
            fn(hp + "wk", layers[l].heads[h].wk);
            fn(hp + "wv", layers[l].heads[h].wv);
        }
        fn(prefix + "wo", layers[l].wo);
        fn(prefix + "ff_w1", layers[l].ff_w1);
        fn(prefix + "ff_b1", layers[l].ff_b1);
        fn(prefix + "ff_w2", layers[l].ff_w2);
        fn(prefix + "ff_b2", layers[l].ff_b2);
    }
    fn("head_mu", head_mu);
    fn("head_eta", head_eta);
    fn("head_gamma", head_gamma);
}

ParamVars make_param_vars(ad::Graph& graph, const ModelParams& params, bool requires_grad) {
    ParamVars pv;
    pv.type_embedding = graph.leaf(params.type_embedding, requires_grad);
    pv.time_scale = graph.leaf(params.time_scale, requires_grad);
    pv.layers.resize(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        pv.layers[l].heads.resize(params.layers[l].heads.size());
        for (std::size_t h = 0; h < params.layers[l].heads.size(); ++h) {
            pv.layers[l].heads[h].wq = graph.leaf(params.layers[l].heads[h].wq, requires_grad);
            pv.layers[l].heads[h].wk = graph.leaf(params.layers[l].heads[h].wk, requires_grad);
            pv.layers[l].heads[h].wv = graph.leaf(params.layers[l].heads[h].wv, requires_grad);
        }
        pv.layers[l].wo = graph.leaf(params.layers[l].wo, requires_grad);
        pv.layers[l].ff_w1 = graph.leaf(params.layers[l].ff_w1, requires_grad);
        pv.layers[l].ff_b1 = graph.leaf(params.layers[l].ff_b1, requires_grad);
        pv.layers[l].ff_w2 = graph.leaf(params.layers[l].ff_w2, requires_grad);
        pv.layers[l].ff_b2 = graph.leaf(params.layers[l].ff_b2, requires_grad);
    }
    pv.head_mu = graph.leaf(params.head_mu, requires_grad);
    pv.head_eta = graph.leaf(params.head_eta, requires_grad);
    pv.head_gamma = graph.leaf(params.head_gamma, requires_grad);
    pv.angular_freq = params.angular_freq;
    return pv;
}

namespace {

Var dropout(Graph& graph, Var x, double rate, RngStream* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    const double keep = 1.0 - rate;
    Mat mask(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
        for (Eigen::Index c = 0; c < mask.cols(); ++c) {
            mask(r, c) = rng->uniform01() < keep ? 1.0 / keep : 0.0;
        }
    }
    return mul(x, graph.constant(std::move(mask)));
}

Var feed_forward(Var x, const ParamVars::Layer& layer) {
    Var f = add_rowvec(matmul(x, layer.ff_w1), layer.ff_b1);
    f = ad::gelu(f);
    return add_rowvec(matmul(f, layer.ff_w2), layer.ff_b2);
}

/// Runs the shared layer stack over the causal prefix stream plus any number
/// of query streams. Prefix row j attends over prefix rows 0..j of the layer
/// input; query row k attends over prefix rows 0..query_counts[k]-1. Keys and
/// values always come from the prefix stream's layer input, so every output
/// row depends only on the events it may see.
std::vector<Var> run_encoder(Graph& graph, const ParamVars& pv, const SAHPConfig& config, Var events,
                             std::vector<Var> queries, const std::vector<int>& query_counts,
                             RngStream* dropout_rng, AttentionCapture* capture) {
    const int num_heads = config.num_heads;
    const double sim_scale = config.similarity_scaling ? 1.0 / std::sqrt(static_cast<double>(config.head_dim())) : 1.0;
    std::vector<int> prefix_counts(static_cast<std::size_t>(events.rows()));
    for (std::size_t j = 0; j < prefix_counts.size(); ++j) prefix_counts[j] = static_cast<int>(j) + 1;

    if (capture) {
        capture->weights.assign(queries.size(),
                                std::vector<std::vector<Mat>>(static_cast<std::size_t>(config.num_layers),
                                                              std::vector<Mat>(static_cast<std::size_t>(num_heads))));
    }

    Var prefix = events;
    for (std::size_t l = 0; l < pv.layers.size(); ++l) {
        const auto& layer = pv.layers[l];
        std::vector<Var> keys(static_cast<std::size_t>(num_heads));
        std::vector<Var> values(static_cast<std::size_t>(num_heads));
        for (int h = 0; h < num_heads; ++h) {
            keys[static_cast<std::size_t>(h)] = matmul(prefix, layer.heads[static_cast<std::size_t>(h)].wk);
            values[static_cast<std::size_t>(h)] = matmul(prefix, layer.heads[static_cast<std::size_t>(h)].wv);
        }

        auto attend = [&](Var stream, const std::vector<int>& counts, std::size_t capture_stream,
                          bool do_capture) {
            std::vector<Var> mixed(static_cast<std::size_t>(num_heads));
            for (int h = 0; h < num_heads; ++h) {
                const auto& proj = layer.heads[static_cast<std::size_t>(h)];
                Var q = matmul(stream, proj.wq);
                Var scores = matmul_nt(q, keys[static_cast<std::size_t>(h)]);
                if (sim_scale != 1.0) scores = scale(scores, sim_scale);
                Var weights = prefix_softmax_rows(scores, counts);
                if (do_capture) {
                    capture->weights[capture_stream][l][static_cast<std::size_t>(h)] = weights.value();
                }
                weights = dropout(graph, weights, config.dropout_rate, dropout_rng);
                mixed[static_cast<std::size_t>(h)] = matmul(weights, values[static_cast<std::size_t>(h)]);
            }
            Var attn = matmul(hconcat(mixed), layer.wo);
            Var normed = layernorm_rows(add(stream, attn));
            Var ff = dropout(graph, feed_forward(normed, layer), config.dropout_rate, dropout_rng);
            return layernorm_rows(add(normed, ff));
        };

        Var next_prefix = attend(prefix, prefix_counts, 0, false);
        for (std::size_t s = 0; s < queries.size(); ++s) {
            queries[s] = attend(queries[s], query_counts, s, capture != nullptr);
        }
        prefix = next_prefix;
    }
    return queries;
}

struct SequenceConstants {
    std::vector<int> types;
    std::vector<double> times;
};

SequenceConstants check_sequence(const SAHPConfig& config, std::span<const Event> events) {
    if (events.empty()) throw std::invalid_argument("model forward: empty prefix");
    SequenceConstants sc;
    sc.types.reserve(events.size());
    sc.times.reserve(events.size());
    double prev = -1.0;
    for (const Event& ev : events) {
        if (ev.type < 0 || ev.type >= config.num_types) {
            throw std::invalid_argument("model forward: event type out of range");
        }
        if (!(ev.time > prev)) throw std::invalid_argument("model forward: times must be strictly increasing");
        prev = ev.time;
        sc.types.push_back(ev.type);
        sc.times.push_back(ev.time);
    }
    return sc;
}

struct EmbeddingVars {
    Var events;    // L x K event embeddings at positions 1..L
    Var pe_query;  // query positional encoding at positions 2..L+1, phase times t_1..t_L
};

EmbeddingVars build_embeddings(Graph& graph, const ParamVars& pv, const SAHPConfig& config,
                               const SequenceConstants& sc) {
    const int K = config.model_dim;
    const auto L = static_cast<Eigen::Index>(sc.times.size());
    Mat pos_ev(L, K), pos_q(L, K), even(L, K), odd(L, K), tau(L, 1);
    for (Eigen::Index j = 0; j < L; ++j) {
        tau(j, 0) = sc.times[static_cast<std::size_t>(j)];
        for (int k = 0; k < K; ++k) {
            pos_ev(j, k) = pv.angular_freq(k) * static_cast<double>(j + 1);
            pos_q(j, k) = pv.angular_freq(k) * static_cast<double>(j + 2);
            even(j, k) = k % 2 == 0 ? 1.0 : 0.0;
            odd(j, k) = k % 2 == 0 ? 0.0 : 1.0;
        }
    }
    Var phase_ev;
    Var phase_q;
    if (config.encoding_mode == EncodingMode::time_shifted) {
        Var shift = matmul_nt(graph.constant(std::move(tau)), pv.time_scale);
        phase_ev = add(graph.constant(std::move(pos_ev)), shift);
        phase_q = add(graph.constant(std::move(pos_q)), shift);
    } else {
        phase_ev = graph.constant(std::move(pos_ev));
        phase_q = graph.constant(std::move(pos_q));
    }
    Var even_v = graph.constant(std::move(even));
    Var odd_v = graph.constant(std::move(odd));
    auto encode = [&](Var phase) { return add(mul(ad::sin(phase), even_v), mul(ad::cos(phase), odd_v)); };
    EmbeddingVars out;
    out.events = add(gather_rows(pv.type_embedding, sc.types), encode(phase_ev));
    out.pe_query = encode(phase_q);
    return out;
}

TypeIntensityVars intensity_heads(const ParamVars& pv, Var stream) {
    TypeIntensityVars out;
    out.mu = ad::gelu(matmul(stream, pv.head_mu));
    out.eta = ad::gelu(matmul(stream, pv.head_eta));
    out.gamma = ad::softplus(matmul(stream, pv.head_gamma));
    return out;
}

}  // namespace

SequenceForward forward_sequence(ad::Graph& graph, const ParamVars& pv, const SAHPConfig& config,
                                 const Sequence& seq, RngStream* dropout_rng, AttentionCapture* capture) {
    config.validate();
    SequenceConstants sc = check_sequence(config, seq.events);
    const auto L = static_cast<Eigen::Index>(sc.times.size());
    EmbeddingVars emb = build_embeddings(graph, pv, config, sc);

    // Per-type query streams: row k carries tp_u + pe(k+2, t_k), the query
    // for the interval opening at t_k. It may see events 0..k.
    std::vector<Var> queries;
    queries.reserve(static_cast<std::size_t>(config.num_types));
    for (int u = 0; u < config.num_types; ++u) {
        std::vector<int> rows(static_cast<std::size_t>(L), u);
        queries.push_back(add(gather_rows(pv.type_embedding, std::move(rows)), emb.pe_query));
    }
    std::vector<int> query_counts(static_cast<std::size_t>(L));
    for (std::size_t k = 0; k < query_counts.size(); ++k) query_counts[k] = static_cast<int>(k) + 1;

    std::vector<Var> encoded =
        run_encoder(graph, pv, config, emb.events, std::move(queries), query_counts, dropout_rng, capture);

    SequenceForward out;
    out.per_type.reserve(encoded.size());
    for (Var stream : encoded) out.per_type.push_back(intensity_heads(pv, stream));
    return out;
}

Eigen::VectorXd attention_mix(const ModelParams& params, const SAHPConfig& config,
                              std::span<const Event> prefix, const Eigen::VectorXd& query) {
    config.validate();
    if (prefix.empty()) throw std::invalid_argument("attention_mix: empty prefix");
    const int K = config.model_dim;
    const int H = config.num_heads;
    if (query.size() != K) throw std::invalid_argument("attention_mix: query has wrong dimension");
    const auto L = static_cast<Eigen::Index>(prefix.size());
    Mat x(L, K);
    for (Eigen::Index j = 0; j < L; ++j) {
        x.row(j) = embed_event(params, config, prefix[static_cast<std::size_t>(j)].type,
                               static_cast<int>(j) + 1, prefix[static_cast<std::size_t>(j)].time)
                       .transpose();
    }
    const double sim_scale = config.similarity_scaling ? 1.0 / std::sqrt(static_cast<double>(config.head_dim())) : 1.0;
    const auto& layer = params.layers.front();
    Eigen::RowVectorXd concat(K);
    for (int h = 0; h < H; ++h) {
        const auto& proj = layer.heads[static_cast<std::size_t>(h)];
        Eigen::RowVectorXd q = query.transpose() * proj.wq;
        Mat keys = x * proj.wk;
        Mat vals = x * proj.wv;
        Eigen::VectorXd scores(L);
        for (Eigen::Index j = 0; j < L; ++j) scores(j) = sim_scale * q.dot(keys.row(j));
        const double m = scores.maxCoeff();
        Eigen::VectorXd weights = (scores.array() - m).exp().matrix();
        weights /= weights.sum();
        Eigen::RowVectorXd mixed = Eigen::RowVectorXd::Zero(config.head_dim());
        for (Eigen::Index j = 0; j < L; ++j) mixed += weights(j) * vals.row(j);
        concat.segment(h * config.head_dim(), config.head_dim()) = mixed;
    }
    return (concat * layer.wo).transpose();
}

Eigen::VectorXd encode_history(const ModelParams& params, const SAHPConfig& config,
                               std::span<const Event> prefix, const Eigen::VectorXd& query) {
    config.validate();
    if (prefix.empty()) throw std::invalid_argument("encode_history: empty prefix");
    if (query.size() != config.model_dim) throw std::invalid_argument("encode_history: query has wrong dimension");
    SequenceConstants sc = check_sequence(config, prefix);
    Graph graph;
    ParamVars pv = make_param_vars(graph, params, false);
    EmbeddingVars emb = build_embeddings(graph, pv, config, sc);
    Mat q(1, config.model_dim);
    q.row(0) = query.transpose();
    std::vector<Var> queries{graph.constant(std::move(q))};
    std::vector<int> query_counts{static_cast<int>(prefix.size())};
    std::vector<Var> encoded =
        run_encoder(graph, pv, config, emb.events, std::move(queries), query_counts, nullptr, nullptr);
    return encoded.front().value().row(0).transpose();
}

std::vector<IntensityState> all_type_intensity_states(const ModelParams& params, const SAHPConfig& config,
                                                      std::span<const Event> prefix) {
    if (prefix.empty()) throw std::invalid_argument("all_type_intensity_states: empty prefix");
    Sequence seq;
    seq.events.assign(prefix.begin(), prefix.end());
    seq.horizon = prefix.back().time;
    auto states = sequence_states(params, config, seq);
    return states.back();
}

std::vector<std::vector<IntensityState>> sequence_states(const ModelParams& params, const SAHPConfig& config,
                                                         const Sequence& seq, AttentionCapture* capture) {
    Graph graph;
    ParamVars pv = make_param_vars(graph, params, false);
    SequenceForward fwd = forward_sequence(graph, pv, config, seq, nullptr, capture);
    const auto L = static_cast<std::size_t>(seq.events.size());
    std::vector<std::vector<IntensityState>> states(L, std::vector<IntensityState>(fwd.per_type.size()));
    for (std::size_t u = 0; u < fwd.per_type.size(); ++u) {
        const Mat& mu = fwd.per_type[u].mu.value();
        const Mat& eta = fwd.per_type[u].eta.value();
        const Mat& gamma = fwd.per_type[u].gamma.value();
        for (std::size_t k = 0; k < L; ++k) {
            states[k][u] = IntensityState{mu(static_cast<Eigen::Index>(k), 0), eta(static_cast<Eigen::Index>(k), 0),
                                          gamma(static_cast<Eigen::Index>(k), 0), seq.events[k].time};
        }
    }
    return states;
}

}  // namespace sahp
