#pragma once

// Flow-matching decoder D(x_t | t, z) -> velocity.
//
// Convolutional U-Net with four levels of two residual blocks on each side
// and three stride-2 down / nearest+conv up sampling layers. The bottom of
// the U is a transformer over the level-3 feature map, one token per 8x8
// pixel patch, with windowed self-attention (|drow|, |dcol| <= 8) and a
// learned 17x17 relative-position bias per block.
//
// Conditioning on z is twofold: z is upsampled to pixel resolution and
// concatenated with x_t at the input, and its spatial mean is embedded and
// added to the time embedding to form the adaptive vector. The first norm of
// every residual block (AdaGN) and of every transformer block (AdaLN) is
// modulated by the adaptive vector; the second GroupNorm of residual blocks
// is modulated by the time embedding alone.

#include "ssdd/autograd.hpp"
#include "ssdd/config.hpp"
#include "ssdd/encoder.hpp"
#include "ssdd/nn.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ssdd {

inline constexpr int kPatchSize      = 8;
inline constexpr int kWindowDistance = 8;
inline constexpr int kRepaTapBlock   = 4;  // 1-based transformer block index
inline constexpr int kHeadDim        = 64;

struct DecoderLayout {
    int resolution = 0;
    int token_grid = 0;  // resolution / 8
    std::array<int, 4> widths{};
    int token_width    = 0;
    int heads          = 0;
    int embed_dim      = 0;
    int num_blocks     = 0;
    int latent_channels = 0;
    int latent_factor  = 0;
};

struct AttentionWindowMask {
    int grid_h       = 0;
    int grid_w       = 0;
    int max_distance = kWindowDistance;
    std::vector<std::uint8_t> allowed;  // row-major [N, N], N = grid_h * grid_w

    int tokens() const { return grid_h * grid_w; }
    bool allows(int p, int q) const { return allowed[static_cast<std::size_t>(p) * tokens() + q] != 0; }
    // Entries of the relative-position table: (2 * max_distance + 1)^2.
    int table_size() const { return (2 * max_distance + 1) * (2 * max_distance + 1); }
};

AttentionWindowMask window_mask(int grid_h, int grid_w, int max_dist = kWindowDistance);

// Nearest-neighbour upsampling of a latent grid [B, c, h, w] to [B, c, H, W];
// H and W must be the same integer multiple of h and w.
template <class T>
ag::Var<T> upsample_latent(const ag::Var<T>& z, int height, int width);
template <class T>
Tensor<T> upsample_latent(const Tensor<T>& z, int height, int width);

// norm(x) * (1 + scale) + shift with (scale, shift) = proj(silu(cond)).
template <class T>
ag::Var<T> adaptive_group_norm(const ag::Var<T>& x, const ag::Var<T>& cond, const nn::Linear<T>& proj);
template <class T>
ag::Var<T> adaptive_layer_norm(const ag::Var<T>& tokens, const ag::Var<T>& cond, const nn::Linear<T>& proj);

// Sinusoidal features of t (scaled by 1000) with `dim` entries.
template <class T>
Tensor<T> sinusoidal_embedding(std::span<const T> t, int dim);

template <class T>
struct DecoderOutput {
    ag::Var<T> velocity;       // shape of x_t
    ag::Var<T> hidden_tokens;  // [B, N, token_width] after transformer block 4
};

template <class T>
class Decoder {
public:
    // resolution must be divisible by 8 and by the encoder factor.
    Decoder(const ModelSizeSpec& model, const EncoderSpec& encoder, int resolution, std::uint64_t seed);
    Decoder(const Decoder&)            = delete;
    Decoder& operator=(const Decoder&) = delete;
    Decoder(Decoder&&)                 = default;
    Decoder& operator=(Decoder&&)      = default;

    // Deep copy with independent parameters.
    Decoder clone() const;

    // x_t [B, 3, H, W]; t holds one value per batch item (or a single value
    // broadcast to all); z [B, c, H/f, W/f].
    DecoderOutput<T> forward(const Tensor<T>& x_t, std::span<const T> t, const ag::Var<T>& z) const;
    // Inference-only velocity, no graph recorded.
    Tensor<T> velocity(const Tensor<T>& x_t, T t, const Tensor<T>& z) const;

    // Post-MLP time embedding [B, embed_dim].
    Tensor<T> time_embedding(std::span<const T> t) const;

    const DecoderLayout& layout() const { return layout_; }
    const ModelSizeSpec& model() const { return model_; }
    const EncoderSpec& encoder_spec() const { return encoder_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }
    std::uint64_t seed() const { return seed_; }

private:
    struct ResBlock {
        nn::Linear<T> ada1;  // adaptive vector -> (scale, shift)
        nn::Linear<T> ada2;  // time embedding -> (scale, shift)
        nn::Conv2d<T> conv1, conv2;
        bool has_skip = false;
        nn::Conv2d<T> skip;
    };
    struct TransformerBlock {
        nn::Linear<T> ada;  // AdaLN before attention
        nn::Linear<T> qkv, proj;
        ag::Var<T> rel_bias;  // [heads, 17*17]
        ag::Var<T> ln2_gamma, ln2_beta;
        nn::Linear<T> fc1, fc2;  // GEGLU MLP
    };

    ResBlock make_block(const std::string& name, int in, int out, Rng& rng);
    ag::Var<T> block_forward(const ResBlock& b, const ag::Var<T>& x, const ag::Var<T>& adaptive,
                             const ag::Var<T>& temb) const;
    ag::Var<T> transformer_forward(const TransformerBlock& b, const ag::Var<T>& tokens, const ag::Var<T>& adaptive,
                                   int grid_h, int grid_w) const;
    ag::Var<T> embed_time(std::span<const T> t, int batch) const;

    ModelSizeSpec model_;
    EncoderSpec encoder_;
    DecoderLayout layout_;
    std::uint64_t seed_ = 0;
    nn::ParamStore<T> params_;

    nn::Linear<T> time_fc1_, time_fc2_;
    nn::Linear<T> latent_fc1_, latent_fc2_;
    nn::Conv2d<T> conv_in_;
    std::array<std::vector<ResBlock>, 4> down_;
    std::array<nn::Conv2d<T>, 3> downsample_;
    std::vector<TransformerBlock> transformer_;
    std::array<std::vector<ResBlock>, 4> up_;
    std::array<nn::Conv2d<T>, 3> upsample_;
    nn::GroupNorm<T> norm_out_;
    nn::Conv2d<T> conv_out_;
};

// Builds and validates a decoder (resolution divisible by 8 and by f).
template <class T>
Decoder<T> build_decoder(const ModelSizeSpec& model, const EncoderSpec& encoder, int resolution, std::uint64_t seed = 0) {
    return Decoder<T>(model, encoder, resolution, seed);
}

DecoderLayout decoder_layout(const ModelSizeSpec& model, const EncoderSpec& encoder, int resolution);

}  // namespace ssdd
