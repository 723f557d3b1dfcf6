#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffsed/audio.hpp"
#include "diffsed/diffusion.hpp"
#include "diffsed/proposals.hpp"
#include "diffsed/tensor.hpp"

namespace diffsed {

enum class Mode { DiffSed, DiffSedBB, SedtBaseline };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct EncoderConfig {
    std::vector<size_t> conv_channels = {16, 32};   // stride-2 3x3 stages
    size_t d_model = 64;
    size_t n_layers = 2;
    size_t n_heads = 4;
    size_t ff_dim = 128;
    double dropout = 0.0;
};

struct DecoderConfig {
    size_t n_layers = 2;
    size_t n_heads = 4;
    size_t ff_dim = 128;
    size_t n_queries = 30;
    size_t n_classes = 3;   // real classes; heads emit K+1 with a no-event slot
};

struct ModelConfig {
    Mode mode = Mode::DiffSed;
    EncoderConfig enc;
    DecoderConfig dec;
    size_t n_mels = 64;

    // Stable digest of everything that determines parameter shapes and
    // forward semantics; checkpoints refuse to load across mismatches.
    std::string arch_hash() const;
};

// Sinusoidal tables (constant, not trained).
Tensor sinusoidal_positions(size_t length, size_t dim);
Tensor sinusoidal_timestep(size_t t, size_t dim);   // [1 x dim]

// Differentiable head outputs plus the plain proposal view.
struct HeadOutputs {
    Tensor bounds;        // [N x 2], sigmoided and canonicalized (onset <= offset)
    Tensor class_logits;  // [N x (K+1)]
    Tensor class_probs;   // [N x (K+1)]
    Tensor z0_hat;        // [N x D] (diffsed mode only; undefined otherwise)

    std::vector<EventProposal> to_proposals() const;
};

// The detector: conv + temporal-transformer encoder, timestep-conditioned
// query decoder, classification/localization heads. Parameters live in a
// ParamStore keyed by stable names so checkpoints are order-independent.
class DetectorModel {
public:
    static DetectorModel init(const ModelConfig& cfg, Rng& rng);
    static DetectorModel from_params(const ModelConfig& cfg, ParamStore params);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Conv stack -> flatten mel axis -> project to D -> positional encoding
    // -> self-attention layers. Returns C_a, [T' x D].
    Tensor encode(const MelSpectrogram& mel, Rng* dropout_rng = nullptr,
                  bool training = false) const;

    // Self-attention over queries, cross-attention onto C_a, feed-forward.
    // A timestep on the query set adds a sinusoidal embedding to every row.
    Tensor decode(const QuerySet& queries, const Tensor& c_a, Rng* dropout_rng = nullptr,
                  bool training = false) const;

    HeadOutputs heads(const Tensor& f_d) const;

    // Learned clean-query dictionary (diffsed / sedt modes).
    QuerySet dictionary_queries() const;
    // Box-space projection parameter (diffsed-bb mode), [2 x D].
    const Tensor& box_projection() const;

    // Clean-query single-pass baseline: dictionary queries, no noise, no
    // timestep embedding.
    HeadOutputs sedt_baseline_forward(const MelSpectrogram& mel) const;

private:
    DetectorModel(ModelConfig cfg, ParamStore params)
        : cfg_(std::move(cfg)), params_(std::move(params)) {}

    Tensor attention(const Tensor& x_q, const Tensor& x_kv, const std::string& prefix,
                     Rng* dropout_rng, bool training) const;
    Tensor feed_forward(const Tensor& x, const std::string& prefix, Rng* dropout_rng,
                        bool training) const;
    Tensor linear(const Tensor& x, const std::string& prefix) const;

    ModelConfig cfg_;
    ParamStore params_;
};

}  // namespace diffsed
