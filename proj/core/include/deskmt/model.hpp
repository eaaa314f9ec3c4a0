#pragma once

#include "deskmt/codec.hpp"
#include "deskmt/nn.hpp"
#include "deskmt/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace deskmt::model {

using nn::Tensor;

struct TransformerShape {
    int model_dim = 64;
    int ff_dim = 128;
    int heads = 4;
    int encoder_layers = 1;
    int decoder_layers = 1;
    int max_positions = 128;

    /// Throws InvalidArgument.
    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TransformerShape from_json(const nlohmann::json& j);
    bool operator==(const TransformerShape&) const = default;
};

/// Which parameters a train step leaves untouched.
struct FreezeScope {
    enum class Kind { none, decoder_only, last_k_decoder_layers };
    Kind kind = Kind::none;
    int k = 0;

    /// "none", "decoder_only", or "last_k_decoder_layers:K".
    static FreezeScope parse(const std::string& text);
    std::string str() const;

    /// decoder_only freezes every decoder.* parameter; last_k_decoder_layers
    /// freezes decoder.layers.{L-k..L-1}.*. Shared token embeddings are never frozen.
    bool frozen(const std::string& param_name, const TransformerShape& shape) const;
    bool operator==(const FreezeScope&) const = default;
};

/// Training hyper-parameters. Defaults are the published full-scale values;
/// desk_profile() returns the scaled-down settings used for CPU runs.
struct TrainConfig {
    int batch_size = 16;
    int update_freq = 1;
    double max_lr = 0.01;
    std::string schedule = "inverse_sqrt";
    long long warmup_steps = 10000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    double label_smoothing = 0.1;
    double weight_decay = 0.0001;
    double dropout = 0.3;
    double clip_norm = 1e-6;
    double pair_temperature = 3.0;
    long long max_updates = 1000000;
    long long valid_freq = 40000;
    int beam_size = 5;
    std::uint64_t seed = 1;
    FreezeScope freeze_scope;

    /// Throws InvalidArgument.
    void validate() const;

    /// Fields whose value differs from the published defaults, e.g. {"clip_norm", "dropout"}.
    std::vector<std::string> overrides() const;

    nlohmann::ordered_json to_json() const;
    /// Missing keys keep their defaults.
    static TrainConfig from_json(const nlohmann::json& j);

    /// CPU-scale settings: short warmup, few updates, light regularization.
    static TrainConfig desk_profile();
};

/// Inverse square root schedule with linear warmup.
double lr_at(long long step, const TrainConfig& config);

/// Encoder-decoder transformer over character ids with pre-norm residual
/// blocks, learned positions, and output projection tied to the token embedding.
class Transformer {
public:
    Transformer(TransformerShape shape, std::size_t vocab_size);

    const TransformerShape& shape() const { return shape_; }
    std::size_t vocab_size() const { return vocab_size_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    /// Uniform init: linear weights in +-sqrt(6/(fan_in+fan_out)),
    /// embeddings in +-sqrt(3/model_dim); biases 0, norm gains 1.
    void init_random(std::uint64_t seed);

    /// Largest absolute initial value allowed for a parameter under init_random.
    double init_bound(const std::string& param_name) const;

    /// Padded id matrices. tgt_in is target[:-1], tgt_out is target[1:].
    /// Source positions at or beyond src_lengths[b] are padding whatever their ids;
    /// with src_lengths empty, padding is wherever src holds the pad id.
    struct Batch {
        std::size_t size = 0;
        std::size_t src_len = 0;
        std::size_t tgt_len = 0;
        std::vector<std::size_t> src_lengths;
        std::vector<int> src;
        std::vector<int> tgt_in;
        std::vector<int> tgt_out;
    };
    static Batch make_batch(std::span<const codec::EncodedPair> pairs);

    /// Logits of shape (size * tgt_len) x vocab. Gradients flow into params().
    /// Throws ShapeMismatch on out-of-range ids or over-long sequences.
    nn::Var forward(nn::Graph& g, const Batch& batch, double dropout, Rng* rng);

    /// Mean label-smoothed loss over non-pad target positions, without gradients.
    double loss(const Batch& batch, double label_smoothing) const;

    /// Encoder output for one source sequence, with per-layer cross-attention keys and values.
    struct Memory {
        std::size_t src_len = 0;
        Tensor states;
        std::vector<Tensor> cross_keys;
        std::vector<Tensor> cross_values;
    };
    Memory encode(std::span<const int> src) const;

    /// Next-token log-probabilities for equal-length prefixes sharing one memory.
    std::vector<std::vector<double>> next_logprobs(const Memory& memory,
                                                   const std::vector<std::vector<int>>& prefixes) const;

private:
    struct Bound;
    Bound bind(nn::Graph& g, bool with_grad) const;
    nn::Var run_encoder(nn::Graph& g, const Bound& p, std::span<const int> src, std::size_t batch,
                        std::size_t len, const std::vector<std::uint8_t>& valid, double dropout, Rng* rng) const;
    nn::Var run_decoder(nn::Graph& g, const Bound& p, std::span<const int> tgt, std::size_t batch, std::size_t len,
                        const std::vector<nn::Var>& cross_k, const std::vector<nn::Var>& cross_v,
                        std::size_t src_len, const std::vector<std::uint8_t>& src_valid, double dropout,
                        Rng* rng) const;
    nn::Var logits_of(nn::Graph& g, const Bound& p, const Batch& batch, double dropout, Rng* rng) const;

    TransformerShape shape_;
    std::size_t vocab_size_;
    nn::ParameterStore params_;
};

/// Mean label-smoothed NLL of logits (rows) against targets, skipping pad rows.
double label_smoothed_loss(const Tensor& logits, std::span<const int> targets, double epsilon, int pad_id);

/// Adam first/second moments, one tensor per parameter in store order.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState zeros_like(const nn::ParameterStore& params);
};

/// Everything that evolves during training.
struct TrainState {
    Transformer model;
    AdamState adam;
    long long step = 0;
    Rng rng;
};

struct StepMetrics {
    long long step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double clipped_norm = 0.0;
    double lr = 0.0;
    std::size_t tokens = 0;
};

/// One optimizer update over `batches` (update_freq micro-batches whose
/// gradients are averaged). Frozen parameters are neither clipped nor moved.
/// Throws NonFiniteLoss before touching any parameter.
StepMetrics train_step(TrainState& state, std::span<const Transformer::Batch> batches, const TrainConfig& config);

/// Serialized model + optimizer + schedule position.
struct Checkpoint {
    TransformerShape shape;
    TrainConfig config;
    codec::Vocabulary vocab;
    TrainState state;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();

    std::string id() const;

    /// File layout: 8-byte magic "DESKMT01", little-endian u64 header length,
    /// JSON header, then raw little-endian f64 tensor payloads at the offsets
    /// listed in the header's tensor directory.
    void save(const std::filesystem::path& path) const;
    /// Throws IncompatibleVocab when `expected_fingerprint` is given and differs.
    static Checkpoint load(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_fingerprint = std::nullopt);
};

/// Fresh seeded checkpoint at step 0.
Checkpoint init_random(const TransformerShape& shape, const codec::Vocabulary& vocab, std::uint64_t seed,
                       const TrainConfig& config = {});

struct EmbeddingInit {
    double noise_std = 0.01;
    std::uint64_t seed = 0;
};

/// Grows the token embedding to `new_vocab`. Existing rows are copied exactly;
/// new rows are the mean of existing rows plus seeded Gaussian noise.
/// Throws IncompatibleVocab unless new_vocab extends the checkpoint vocabulary.
Checkpoint extend_embeddings(const Checkpoint& ckpt, const codec::Vocabulary& new_vocab, EmbeddingInit init = {});

}  // namespace deskmt::model
