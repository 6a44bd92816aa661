#include "ssdd/decoder.hpp"

#include <cmath>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "decoder";

int head_count(int width) {
    int heads = std::max(1, width / kHeadDim);
    while (width % heads != 0) --heads;
    return heads;
}

}  // namespace

DecoderLayout decoder_layout(const ModelSizeSpec& model, const EncoderSpec& encoder, int resolution) {
    require(resolution > 0 && resolution % kPatchSize == 0, kModule,
            "resolution " + std::to_string(resolution) + " is not divisible by 8");
    require(resolution % encoder.f == 0, kModule,
            "resolution " + std::to_string(resolution) + " is not divisible by f=" + std::to_string(encoder.f));
    DecoderLayout l;
    l.resolution = resolution;
    l.token_grid = resolution / kPatchSize;
    for (int i = 0; i < 4; ++i) l.widths[i] = model.base_channels * model.depth_multipliers[i];
    l.token_width     = l.widths[3];
    l.heads           = head_count(l.token_width);
    l.embed_dim       = 4 * model.base_channels;
    l.num_blocks      = model.num_transformer_blocks;
    l.latent_channels = encoder.c;
    l.latent_factor   = encoder.f;
    return l;
}

AttentionWindowMask window_mask(int grid_h, int grid_w, int max_dist) {
    require(grid_h > 0 && grid_w > 0, kModule, "window mask needs a positive grid");
    AttentionWindowMask m;
    m.grid_h       = grid_h;
    m.grid_w       = grid_w;
    m.max_distance = max_dist;
    const int n    = grid_h * grid_w;
    m.allowed.assign(static_cast<std::size_t>(n) * n, 0);
    for (int p = 0; p < n; ++p) {
        for (int q = 0; q < n; ++q) {
            const int dr = std::abs(q / grid_w - p / grid_w);
            const int dc = std::abs(q % grid_w - p % grid_w);
            m.allowed[static_cast<std::size_t>(p) * n + q] = (dr <= max_dist && dc <= max_dist) ? 1 : 0;
        }
    }
    return m;
}

template <class T>
ag::Var<T> upsample_latent(const ag::Var<T>& z, int height, int width) {
    require(z.shape().size() == 4, kModule, "latent must be [B, c, h, w], got " + shape_str(z.shape()));
    const int h = z.dim(2), w = z.dim(3);
    require(h > 0 && w > 0 && height % h == 0 && width % w == 0 && height / h == width / w, kModule,
            "cannot upsample latent " + shape_str(z.shape()) + " to " + std::to_string(height) + "x" + std::to_string(width));
    return ag::upsample_nearest(z, height / h);
}

template <class T>
Tensor<T> upsample_latent(const Tensor<T>& z, int height, int width) {
    ag::NoGradGuard guard;
    return upsample_latent(ag::constant(z), height, width).value();
}

template <class T>
ag::Var<T> adaptive_group_norm(const ag::Var<T>& x, const ag::Var<T>& cond, const nn::Linear<T>& proj) {
    return ag::modulate(ag::group_norm(x, nn::group_count(x.dim(1))), proj(ag::silu(cond)), false);
}

template <class T>
ag::Var<T> adaptive_layer_norm(const ag::Var<T>& tokens, const ag::Var<T>& cond, const nn::Linear<T>& proj) {
    return ag::modulate(ag::layer_norm(tokens), proj(ag::silu(cond)), true);
}

template <class T>
Tensor<T> sinusoidal_embedding(std::span<const T> t, int dim) {
    require(dim >= 2 && dim % 2 == 0, kModule, "embedding dimension must be even");
    const int half = dim / 2;
    Tensor<T> out({static_cast<int>(t.size()), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg  = 1000.0 * static_cast<double>(t[b]) * freq;
            out[b * dim + i]        = static_cast<T>(std::cos(arg));
            out[b * dim + half + i] = static_cast<T>(std::sin(arg));
        }
    }
    return out;
}

template <class T>
Decoder<T>::Decoder(const ModelSizeSpec& model, const EncoderSpec& encoder, int resolution, std::uint64_t seed)
    : model_(model), encoder_(encoder), layout_(decoder_layout(model, encoder, resolution)), seed_(seed) {
    Rng rng(seed);
    const auto& w = layout_.widths;
    const int e   = layout_.embed_dim;
    const int c   = layout_.latent_channels;

    time_fc1_   = nn::Linear<T>::make(params_, "decoder/time_embed/fc1", model_.base_channels, e, rng);
    time_fc2_   = nn::Linear<T>::make(params_, "decoder/time_embed/fc2", e, e, rng);
    latent_fc1_ = nn::Linear<T>::make(params_, "decoder/latent_embed/fc1", c, e, rng);
    latent_fc2_ = nn::Linear<T>::make(params_, "decoder/latent_embed/fc2", e, e, rng);
    conv_in_    = nn::Conv2d<T>::make(params_, "decoder/conv_in", 3 + c, w[0], 3, 1, rng);

    int ch = w[0];
    for (int level = 0; level < 4; ++level) {
        const std::string base = "decoder/down" + std::to_string(level);
        for (int i = 0; i < 2; ++i) {
            down_[level].push_back(make_block(base + "/block" + std::to_string(i), ch, w[level], rng));
            ch = w[level];
        }
        if (level < 3) {
            downsample_[level] = nn::Conv2d<T>::make(params_, base + "/downsample", ch, ch, 3, 2, rng);
        }
    }

    const int tw = layout_.token_width;
    const int span = 2 * kWindowDistance + 1;
    for (int k = 0; k < layout_.num_blocks; ++k) {
        const std::string base = "decoder/transformer/block" + std::to_string(k);
        TransformerBlock b;
        b.ada       = nn::Linear<T>::make(params_, base + "/ada", e, 2 * tw, rng);
        b.qkv       = nn::Linear<T>::make(params_, base + "/attn/qkv", tw, 3 * tw, rng);
        b.proj      = nn::Linear<T>::make(params_, base + "/attn/proj", tw, tw, rng);
        b.rel_bias  = params_.create(base + "/attn/rel_bias", Tensor<T>({layout_.heads, span * span}));
        b.ln2_gamma = params_.create(base + "/ln2/gamma", Tensor<T>({tw}, T(1)));
        b.ln2_beta  = params_.create(base + "/ln2/beta", Tensor<T>({tw}));
        b.fc1       = nn::Linear<T>::make(params_, base + "/mlp/fc1", tw, 4 * tw, rng);
        b.fc2       = nn::Linear<T>::make(params_, base + "/mlp/fc2", 2 * tw, tw, rng);
        transformer_.push_back(std::move(b));
    }

    for (int level = 3; level >= 0; --level) {
        const std::string base = "decoder/up" + std::to_string(level);
        for (int i = 0; i < 2; ++i) {
            const int in = i == 0 ? ch + w[level] : ch;  // first block consumes the skip connection
            up_[level].push_back(make_block(base + "/block" + std::to_string(i), in, w[level], rng));
            ch = w[level];
        }
        if (level > 0) {
            upsample_[level - 1] = nn::Conv2d<T>::make(params_, base + "/upsample", ch, ch, 3, 1, rng);
        }
    }
    norm_out_ = nn::GroupNorm<T>::make(params_, "decoder/norm_out", ch);
    conv_out_ = nn::Conv2d<T>::make(params_, "decoder/conv_out", ch, 3, 3, 1, rng, /*zero_init=*/true);
}

template <class T>
typename Decoder<T>::ResBlock Decoder<T>::make_block(const std::string& name, int in, int out, Rng& rng) {
    ResBlock b;
    b.ada1  = nn::Linear<T>::make(params_, name + "/ada1", layout_.embed_dim, 2 * in, rng);
    b.conv1 = nn::Conv2d<T>::make(params_, name + "/conv1", in, out, 3, 1, rng);
    b.ada2  = nn::Linear<T>::make(params_, name + "/ada2", layout_.embed_dim, 2 * out, rng);
    b.conv2 = nn::Conv2d<T>::make(params_, name + "/conv2", out, out, 3, 1, rng);
    if (in != out) {
        b.has_skip = true;
        b.skip     = nn::Conv2d<T>::make(params_, name + "/skip", in, out, 1, 1, rng);
    }
    return b;
}

template <class T>
Decoder<T> Decoder<T>::clone() const {
    Decoder copy(model_, encoder_, layout_.resolution, seed_);
    copy.params_.copy_values_from(params_);
    return copy;
}

template <class T>
ag::Var<T> Decoder<T>::block_forward(const ResBlock& b, const ag::Var<T>& x, const ag::Var<T>& adaptive,
                                     const ag::Var<T>& temb) const {
    auto h = b.conv1(ag::silu(adaptive_group_norm(x, adaptive, b.ada1)));
    h      = b.conv2(ag::silu(adaptive_group_norm(h, temb, b.ada2)));
    return ag::add(b.has_skip ? b.skip(x) : x, h);
}

template <class T>
ag::Var<T> Decoder<T>::transformer_forward(const TransformerBlock& b, const ag::Var<T>& tokens,
                                           const ag::Var<T>& adaptive, int grid_h, int grid_w) const {
    auto a    = adaptive_layer_norm(tokens, adaptive, b.ada);
    auto attn = ag::window_attention(b.qkv(a), b.rel_bias, layout_.heads, grid_h, grid_w, kWindowDistance);
    auto h    = ag::add(tokens, b.proj(attn));
    auto m    = ag::affine(ag::layer_norm(h), b.ln2_gamma, b.ln2_beta, true);
    return ag::add(h, b.fc2(ag::geglu(b.fc1(m))));
}

template <class T>
ag::Var<T> Decoder<T>::embed_time(std::span<const T> t, int batch) const {
    std::vector<T> per_item(t.begin(), t.end());
    if (per_item.size() == 1 && batch > 1) per_item.assign(batch, t[0]);
    require(static_cast<int>(per_item.size()) == batch, kModule, "need one t per batch item");
    auto sin = ag::constant(sinusoidal_embedding<T>(per_item, model_.base_channels));
    return time_fc2_(ag::silu(time_fc1_(sin)));
}

template <class T>
Tensor<T> Decoder<T>::time_embedding(std::span<const T> t) const {
    ag::NoGradGuard guard;
    return embed_time(t, static_cast<int>(t.size())).value();
}

template <class T>
DecoderOutput<T> Decoder<T>::forward(const Tensor<T>& x_t, std::span<const T> t, const ag::Var<T>& z) const {
    require(x_t.rank() == 4 && x_t.dim(1) == 3, kModule, "x_t must be [B, 3, H, W], got " + shape_str(x_t.shape()));
    const int batch = x_t.dim(0), height = x_t.dim(2), width = x_t.dim(3);
    require(height % kPatchSize == 0 && width % kPatchSize == 0, kModule,
            "x_t " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by 8");
    require(z.shape().size() == 4 && z.dim(0) == batch && z.dim(1) == layout_.latent_channels &&
                z.dim(2) * layout_.latent_factor == height && z.dim(3) * layout_.latent_factor == width,
            kModule, "latent " + shape_str(z.shape()) + " does not match x_t " + shape_str(x_t.shape()));
    for (T v : t) require(v >= T(0) && v <= T(1), kModule, "t must lie in [0, 1]");

    auto temb     = embed_time(t, batch);
    auto zemb     = latent_fc2_(ag::silu(latent_fc1_(ag::mean_spatial(z))));
    auto adaptive = ag::add(temb, zemb);

    auto h = conv_in_(ag::concat_channels(ag::constant(x_t), upsample_latent(z, height, width)));
    std::array<ag::Var<T>, 4> skips;
    for (int level = 0; level < 4; ++level) {
        for (const auto& b : down_[level]) h = block_forward(b, h, adaptive, temb);
        skips[level] = h;
        if (level < 3) h = downsample_[level](h);
    }

    const int gh = height / kPatchSize, gw = width / kPatchSize;
    auto tokens  = ag::nchw_to_tokens(h);
    ag::Var<T> hidden;
    for (int k = 0; k < layout_.num_blocks; ++k) {
        tokens = transformer_forward(transformer_[k], tokens, adaptive, gh, gw);
        if (k + 1 == kRepaTapBlock) hidden = tokens;
    }
    h = ag::tokens_to_nchw(tokens, gh, gw);

    for (int level = 3; level >= 0; --level) {
        h = ag::concat_channels(h, skips[level]);
        for (const auto& b : up_[level]) h = block_forward(b, h, adaptive, temb);
        if (level > 0) h = upsample_[level - 1](ag::upsample_nearest(h, 2));
    }
    auto v = conv_out_(ag::silu(norm_out_(h)));
    return {v, hidden ? hidden : tokens};
}

template <class T>
Tensor<T> Decoder<T>::velocity(const Tensor<T>& x_t, T t, const Tensor<T>& z) const {
    ag::NoGradGuard guard;
    const T tt[1] = {t};
    return forward(x_t, std::span<const T>(tt, 1), ag::constant(z)).velocity.value();
}

template class Decoder<float>;
template class Decoder<double>;
template ag::Var<float> upsample_latent(const ag::Var<float>&, int, int);
template ag::Var<double> upsample_latent(const ag::Var<double>&, int, int);
template Tensor<float> upsample_latent(const Tensor<float>&, int, int);
template Tensor<double> upsample_latent(const Tensor<double>&, int, int);
template ag::Var<float> adaptive_group_norm(const ag::Var<float>&, const ag::Var<float>&, const nn::Linear<float>&);
template ag::Var<double> adaptive_group_norm(const ag::Var<double>&, const ag::Var<double>&, const nn::Linear<double>&);
template ag::Var<float> adaptive_layer_norm(const ag::Var<float>&, const ag::Var<float>&, const nn::Linear<float>&);
template ag::Var<double> adaptive_layer_norm(const ag::Var<double>&, const ag::Var<double>&, const nn::Linear<double>&);
template Tensor<float> sinusoidal_embedding(std::span<const float>, int);
template Tensor<double> sinusoidal_embedding(std::span<const double>, int);

}  // namespace ssdd
