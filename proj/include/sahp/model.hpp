#pragma once

#include <filesystem>
#include <functional>
#include <span>

#include "sahp/graph.hpp"
#include "sahp/rng.hpp"
#include "sahp/types.hpp"

namespace sahp {

enum class EncodingMode { time_shifted, conventional };

std::string to_string(EncodingMode mode);
EncodingMode encoding_mode_from_string(const std::string& s);

struct SAHPConfig {
    int num_types = 2;
    int model_dim = 16;  // K, even
    int num_heads = 2;   // must divide model_dim
    int num_layers = 2;  // stacked attention layers
    double dropout_rate = 0.1;
    EncodingMode encoding_mode = EncodingMode::time_shifted;
    // Divide attention inner products by sqrt(model_dim / num_heads). Off by
    // default: the similarity is the plain exponentiated inner product.
    bool similarity_scaling = false;
    // The model's time axis is data time multiplied by this factor. The
    // softplus intensity head is most expressive for rates of order one, so
    // training picks a rescale that brings the event rate into that range;
    // the likelihood, prediction and evaluation layers convert back to data
    // units exactly (lambda_data(t) = r * lambda_model(r t)).
    double time_rescale = 1.0;

    int head_dim() const { return model_dim / num_heads; }
    void validate() const;
};

/// Data-axis copy: times and horizon multiplied by the factor.
Sequence scale_sequence_time(const Sequence& seq, double factor);

/// All tensors of the model. Everything is trainable except angular_freq,
/// which is fixed at construction.
struct ModelParams {
    ad::Mat type_embedding;       // U x K
    Eigen::VectorXd angular_freq; // K, fixed sinusoid frequencies
    ad::Mat time_scale;           // K x 1, trainable phase-shift scales w

    struct HeadProj {
        ad::Mat wq, wk, wv;  // K x head_dim each
    };
    struct Layer {
        std::vector<HeadProj> heads;
        ad::Mat wo;     // K x K output projection
        ad::Mat ff_w1;  // K x 4K
        ad::Mat ff_b1;  // 1 x 4K
        ad::Mat ff_w2;  // 4K x K
        ad::Mat ff_b2;  // 1 x K
    };
    std::vector<Layer> layers;

    ad::Mat head_mu, head_eta, head_gamma;  // K x 1 intensity heads

    /// Canonical enumeration of the trainable tensors; the visiting order is
    /// fixed and shared by initialization, the optimizer and checkpoints.
    void for_each_trainable(const std::function<void(const std::string&, ad::Mat&)>& fn);
    void for_each_trainable(const std::function<void(const std::string&, const ad::Mat&)>& fn) const;
};

/// Geometric frequency schedule omega_k = 10000^(-2 floor(k/2) / K).
Eigen::VectorXd default_angular_freq(int model_dim);

/// Xavier-uniform initialization of all trainable tensors; time_scale starts
/// at angular_freq so the time shift is initially commensurate with the
/// index term.
ModelParams init_params(const SAHPConfig& config, std::uint64_t seed);

/// Intensity on one inter-event interval (Eq.-style exponential relaxation
/// from softplus(eta) at the interval start toward softplus(mu)).
struct IntensityState {
    double mu = 0.0;
    double eta = 0.0;
    double gamma = 1.0;         // > 0
    double interval_start = 0.0;
};

/// softplus(mu + (eta - mu) exp(-gamma (t - interval_start))); strictly
/// positive. Throws std::invalid_argument for t before the interval start.
double intensity_at(const IntensityState& state, double t);

/// Sinusoidal position code with the time-shifted phase: dimension k carries
/// sin/cos(omega_k i + w_k t) for even/odd k. Conventional mode drops the
/// w_k t term.
Eigen::VectorXd positional_encoding(const ModelParams& params, const SAHPConfig& config, int position,
                                    double t);

/// Type embedding row plus positional encoding.
Eigen::VectorXd embed_event(const ModelParams& params, const SAHPConfig& config, int type, int position,
                            double t);

/// mu = gelu(h . W_mu), eta = gelu(h . W_eta), gamma = softplus(h . W_gamma).
/// interval_start is left at 0 for the caller to fill.
IntensityState intensity_params(const ModelParams& params, const Eigen::VectorXd& h);

/// First-layer multi-head attention mix for one query over the prefix event
/// embeddings: per head softmax(q . k_j) weights (optionally scaled), value
/// mixing, head concatenation and output projection. This is the bare
/// attention operation, before any residual/normalization wrapping.
Eigen::VectorXd attention_mix(const ModelParams& params, const SAHPConfig& config,
                              std::span<const Event> prefix, const Eigen::VectorXd& query);

/// Runs the given query vector through the full stacked encoder against the
/// prefix (all positions visible to the query). Evaluation mode, no dropout.
Eigen::VectorXd encode_history(const ModelParams& params, const SAHPConfig& config,
                               std::span<const Event> prefix, const Eigen::VectorXd& query);

/// Intensity states for every type on the interval opening at the last prefix
/// event: for each type u the query tp_u + pe(i+1, t_i) attends over the
/// masked prefix and feeds the intensity heads.
std::vector<IntensityState> all_type_intensity_states(const ModelParams& params, const SAHPConfig& config,
                                                      std::span<const Event> prefix);

// --- graph-building interface shared with the training loop ---

struct ParamVars {
    ad::Var type_embedding;
    ad::Var time_scale;
    struct HeadProj {
        ad::Var wq, wk, wv;
    };
    struct Layer {
        std::vector<HeadProj> heads;
        ad::Var wo, ff_w1, ff_b1, ff_w2, ff_b2;
    };
    std::vector<Layer> layers;
    ad::Var head_mu, head_eta, head_gamma;
    Eigen::VectorXd angular_freq;  // fixed, not a graph node

    void for_each(const std::function<void(const std::string&, ad::Var)>& fn) const;
};

ParamVars make_param_vars(ad::Graph& graph, const ModelParams& params, bool requires_grad);

/// Query-stream attention weights recorded during a forward pass:
/// weights[type][layer][head] is L x L, row k holding the distribution of the
/// type-u query for interval k over key positions 0..k.
struct AttentionCapture {
    std::vector<std::vector<std::vector<ad::Mat>>> weights;
};

struct TypeIntensityVars {
    ad::Var mu, eta, gamma;  // L x 1; row k is the state on (t_k, t_{k+1}]
};

struct SequenceForward {
    std::vector<TypeIntensityVars> per_type;  // size num_types
};

/// Builds the full forward pass for one sequence on the graph. Two token
/// streams share the layer weights: the causal prefix stream over the event
/// embeddings, and one query stream per type whose row k attends over prefix
/// positions 0..k of the current layer input. dropout_rng == nullptr means
/// evaluation mode (no dropout).
SequenceForward forward_sequence(ad::Graph& graph, const ParamVars& pv, const SAHPConfig& config,
                                 const Sequence& seq, RngStream* dropout_rng,
                                 AttentionCapture* capture = nullptr);

/// Plain-number view of the forward states: states[k][u] for interval k.
std::vector<std::vector<IntensityState>> sequence_states(const ModelParams& params, const SAHPConfig& config,
                                                         const Sequence& seq,
                                                         AttentionCapture* capture = nullptr);

// --- checkpoint container ---

/// Single-file JSON checkpoint: config plus a tensor manifest with base64
/// little-endian float64 payloads. Round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const SAHPConfig& config, const std::filesystem::path& path);
std::pair<ModelParams, SAHPConfig> load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_json(const ModelParams& params, const SAHPConfig& config);
std::pair<ModelParams, SAHPConfig> checkpoint_from_json(const std::string& text);

}  // namespace sahp
