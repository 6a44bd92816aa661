#pragma once

// KL-regularized convolutional encoder E(x) -> N(mean, exp(log_variance)) over
// a (c, H/f, W/f) latent grid.
//
// Layout: conv_in, then one residual block per level with a stride-2
// convolution between levels (log2 f of them), then GroupNorm/SiLU and a 3x3
// projection to 2c channels split into mean and log-variance. Level widths
// follow the decoder preset: base_channels * depth_multipliers[min(level, 3)].

#include "ssdd/autograd.hpp"
#include "ssdd/config.hpp"
#include "ssdd/nn.hpp"
#include "ssdd/rng.hpp"

#include <vector>

namespace ssdd {

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 20.0;

template <class T>
struct GaussianPosterior {
    ag::Var<T> mean;          // [B, c, H/f, W/f]
    ag::Var<T> log_variance;  // same shape, clamped to [kLogVarMin, kLogVarMax]
};

template <class T>
struct LatentGrid {
    ag::Var<T> values;  // [B, c, H/f, W/f]
    EncoderSpec source_spec;
};

template <class T>
class Encoder {
public:
    Encoder(const ModelSizeSpec& model, const EncoderSpec& spec, std::uint64_t seed);
    // Parameters are shared handles; copying would alias them.
    Encoder(const Encoder&)            = delete;
    Encoder& operator=(const Encoder&) = delete;
    Encoder(Encoder&&)                 = default;
    Encoder& operator=(Encoder&&)      = default;

    // image [B, 3, H, W] in [-1, 1]; H and W must be divisible by f.
    GaussianPosterior<T> encode(const Tensor<T>& image) const;
    GaussianPosterior<T> encode(const ag::Var<T>& image) const;

    const EncoderSpec& spec() const { return spec_; }
    const ModelSizeSpec& model() const { return model_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    // Stops gradient flow into the encoder and drops stale gradients.
    // Idempotent.
    void freeze();
    bool frozen() const { return !params_.trainable(); }

private:
    struct Block {
        nn::GroupNorm<T> norm1, norm2;
        nn::Conv2d<T> conv1, conv2;
        bool has_skip = false;
        nn::Conv2d<T> skip;
    };

    ag::Var<T> block_forward(const Block& b, const ag::Var<T>& x) const;

    ModelSizeSpec model_;
    EncoderSpec spec_;
    nn::ParamStore<T> params_;
    nn::Conv2d<T> conv_in_;
    std::vector<Block> blocks_;
    std::vector<nn::Conv2d<T>> downs_;
    nn::GroupNorm<T> norm_out_;
    nn::Conv2d<T> conv_out_;
};

// Returns the encoder with its weights frozen; calling it again is a no-op.
template <class T>
Encoder<T>& freeze(Encoder<T>& encoder) {
    encoder.freeze();
    return encoder;
}

// Reparameterized draw z = mean + exp(log_variance / 2) * n, n ~ N(0, I).
template <class T>
LatentGrid<T> sample_latent(const GaussianPosterior<T>& posterior, Rng& rng, const EncoderSpec& spec);

// Posterior mean as the latent (no sampling noise).
template <class T>
LatentGrid<T> mode_latent(const GaussianPosterior<T>& posterior, const EncoderSpec& spec);

// Mean over elements of KL(N(mu, sigma^2) || N(0, 1)).
template <class T>
ag::Var<T> kl_loss(const GaussianPosterior<T>& posterior);

}  // namespace ssdd
