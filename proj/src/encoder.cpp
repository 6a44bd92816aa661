#include "ssdd/encoder.hpp"

#include <algorithm>
#include <bit>

namespace ssdd {

namespace {
constexpr std::string_view kModule = "encoder";
}

template <class T>
Encoder<T>::Encoder(const ModelSizeSpec& model, const EncoderSpec& spec, std::uint64_t seed) : model_(model), spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    const int levels = std::countr_zero(static_cast<unsigned>(spec_.f)) + 1;
    auto width       = [&](int level) { return model_.base_channels * model_.depth_multipliers[std::min(level, 3)]; };

    conv_in_ = nn::Conv2d<T>::make(params_, "encoder/conv_in", 3, width(0), 3, 1, rng);
    int in_ch = width(0);
    for (int level = 0; level < levels; ++level) {
        const int out_ch       = width(level);
        const std::string base = "encoder/level" + std::to_string(level) + "/block0";
        Block b;
        b.norm1 = nn::GroupNorm<T>::make(params_, base + "/norm1", in_ch);
        b.conv1 = nn::Conv2d<T>::make(params_, base + "/conv1", in_ch, out_ch, 3, 1, rng);
        b.norm2 = nn::GroupNorm<T>::make(params_, base + "/norm2", out_ch);
        b.conv2 = nn::Conv2d<T>::make(params_, base + "/conv2", out_ch, out_ch, 3, 1, rng);
        if (in_ch != out_ch) {
            b.has_skip = true;
            b.skip     = nn::Conv2d<T>::make(params_, base + "/skip", in_ch, out_ch, 1, 1, rng);
        }
        blocks_.push_back(std::move(b));
        if (level + 1 < levels) {
            downs_.push_back(nn::Conv2d<T>::make(params_, "encoder/level" + std::to_string(level) + "/down", out_ch,
                                                 out_ch, 3, 2, rng));
        }
        in_ch = out_ch;
    }
    norm_out_ = nn::GroupNorm<T>::make(params_, "encoder/norm_out", in_ch);
    conv_out_ = nn::Conv2d<T>::make(params_, "encoder/conv_out", in_ch, 2 * spec_.c, 3, 1, rng);
}

template <class T>
ag::Var<T> Encoder<T>::block_forward(const Block& b, const ag::Var<T>& x) const {
    auto h = b.conv1(ag::silu(b.norm1(x)));
    h      = b.conv2(ag::silu(b.norm2(h)));
    return ag::add(b.has_skip ? b.skip(x) : x, h);
}

template <class T>
GaussianPosterior<T> Encoder<T>::encode(const Tensor<T>& image) const {
    return encode(ag::constant(image));
}

template <class T>
GaussianPosterior<T> Encoder<T>::encode(const ag::Var<T>& image) const {
    const auto& s = image.shape();
    require(s.size() == 4 && s[1] == 3, kModule, "expected an image batch [B, 3, H, W], got " + shape_str(s));
    require(s[2] % spec_.f == 0 && s[3] % spec_.f == 0, kModule,
            "image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " is not divisible by f=" +
                std::to_string(spec_.f));
    auto h = conv_in_(image);
    for (std::size_t level = 0; level < blocks_.size(); ++level) {
        h = block_forward(blocks_[level], h);
        if (level < downs_.size()) h = downs_[level](h);
    }
    h = conv_out_(ag::silu(norm_out_(h)));
    GaussianPosterior<T> post;
    post.mean         = ag::slice_channels(h, 0, spec_.c);
    post.log_variance = ag::clamp(ag::slice_channels(h, spec_.c, spec_.c), T(kLogVarMin), T(kLogVarMax));
    return post;
}

template <class T>
void Encoder<T>::freeze() {
    params_.zero_grad();
    params_.set_trainable(false);
}

template <class T>
LatentGrid<T> sample_latent(const GaussianPosterior<T>& posterior, Rng& rng, const EncoderSpec& spec) {
    require(posterior.mean.shape() == posterior.log_variance.shape(), kModule, "posterior mean/log-variance shapes differ");
    auto noise = ag::constant(randn<T>(posterior.mean.shape(), rng));
    auto std   = ag::exp(ag::scale(posterior.log_variance, T(0.5)));
    return {ag::add(posterior.mean, ag::mul(std, noise)), spec};
}

template <class T>
LatentGrid<T> mode_latent(const GaussianPosterior<T>& posterior, const EncoderSpec& spec) {
    return {posterior.mean, spec};
}

template <class T>
ag::Var<T> kl_loss(const GaussianPosterior<T>& posterior) {
    return ag::kl_normal(posterior.mean, posterior.log_variance);
}

template class Encoder<float>;
template class Encoder<double>;
template LatentGrid<float> sample_latent(const GaussianPosterior<float>&, Rng&, const EncoderSpec&);
template LatentGrid<double> sample_latent(const GaussianPosterior<double>&, Rng&, const EncoderSpec&);
template LatentGrid<float> mode_latent(const GaussianPosterior<float>&, const EncoderSpec&);
template LatentGrid<double> mode_latent(const GaussianPosterior<double>&, const EncoderSpec&);
template ag::Var<float> kl_loss(const GaussianPosterior<float>&);
template ag::Var<double> kl_loss(const GaussianPosterior<double>&);

}  // namespace ssdd
