#include "ssdd/features.hpp"

#include "ssdd/hash.hpp"

namespace ssdd {

namespace {

constexpr std::string_view kModule = "features";
constexpr int kToyWidths[3]  = {16, 32, 64};
constexpr int kToyStrides[3] = {1, 2, 2};

}  // namespace

template <class T>
Tensor<T> FeatureExtractor<T>::pooled(const Tensor<T>& image) const {
    ag::NoGradGuard guard;
    const auto taps = features(ag::constant(image));
    const int batch = image.dim(0);
    int dim         = 0;
    for (const auto& f : taps) dim += f.dim(1);
    Tensor<T> out({batch, dim});
    int offset = 0;
    for (const auto& f : taps) {
        const auto m = ag::mean_spatial(f).value();
        const int c  = f.dim(1);
        for (int b = 0; b < batch; ++b) {
            for (int k = 0; k < c; ++k) out[static_cast<std::size_t>(b) * dim + offset + k] = m[b * c + k];
        }
        offset += c;
    }
    return out;
}

template <class T>
int FeatureExtractor<T>::pooled_dim(int height, int width) const {
    int dim = 0;
    for (const auto& s : output_shapes(height, width)) dim += s[0];
    return dim;
}

template <class T>
ToyExtractor<T>::ToyExtractor(std::uint64_t seed) : seed_(seed) {
    Rng rng(seed);
    int in = 3;
    for (int i = 0; i < 3; ++i) {
        convs_.push_back(nn::Conv2d<T>::make(params_, "extractor/conv" + std::to_string(i), in, kToyWidths[i], 3,
                                             kToyStrides[i], rng));
        in = kToyWidths[i];
    }
    params_.set_trainable(false);
    // The fingerprint is taken in double so both precisions share an identity.
    Fnv1a h;
    for (const auto& [name, v] : params_.entries()) {
        h.update(name);
        for (T x : v.value()) {
            const double d = static_cast<double>(static_cast<float>(x));
            h.update(&d, sizeof d);
        }
    }
    identity_ = "toy-conv3/" + std::to_string(seed) + "/" + h.hex();
}

template <class T>
std::vector<Shape> ToyExtractor<T>::output_shapes(int height, int width) const {
    require(height >= 4 && width >= 4 && height % 4 == 0 && width % 4 == 0, kModule,
            "toy extractor needs a resolution divisible by 4, got " + std::to_string(height) + "x" +
                std::to_string(width));
    std::vector<Shape> out;
    int h = height, w = width;
    for (int i = 0; i < 3; ++i) {
        h /= kToyStrides[i];
        w /= kToyStrides[i];
        out.push_back({kToyWidths[i], h, w});
    }
    return out;
}

template <class T>
std::vector<ag::Var<T>> ToyExtractor<T>::features(const ag::Var<T>& image) const {
    require(image.shape().size() == 4 && image.dim(1) == 3, kModule,
            "extractor input must be [B, 3, H, W], got " + shape_str(image.shape()));
    output_shapes(image.dim(2), image.dim(3));
    std::vector<ag::Var<T>> taps;
    auto h = image;
    for (const auto& conv : convs_) {
        h = ag::silu(conv(h));
        taps.push_back(h);
    }
    return taps;
}

template <class T>
ag::Var<T> perceptual_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat, const FeatureExtractor<T>& extractor) {
    require(x.shape() == x_hat.shape(), kModule,
            "perceptual_loss: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
    const auto fa = extractor.features(x);
    const auto fb = extractor.features(x_hat);
    const T w     = T(1) / static_cast<T>(fa.size());
    ag::Var<T> total;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        auto d    = ag::sub(ag::channel_unit_normalize(fa[l]), ag::channel_unit_normalize(fb[l]));
        auto term = ag::scale(ag::mean(ag::mul(d, d)), w * static_cast<T>(fa[l].dim(1)));
        total     = total ? ag::add(total, term) : term;
    }
    return total;
}

template <class T>
double perceptual_distance(const Tensor<T>& x, const Tensor<T>& x_hat, const FeatureExtractor<T>& extractor) {
    ag::NoGradGuard guard;
    return static_cast<double>(perceptual_loss(ag::constant(x), ag::constant(x_hat), extractor).item());
}

template <class T>
AlignmentHead<T>::AlignmentHead(int token_width, int feature_dim, std::uint64_t seed) : feature_dim_(feature_dim) {
    Rng rng(seed);
    const int hidden = std::max(token_width, feature_dim);
    fc1_             = nn::Linear<T>::make(params_, "repa_head/fc1", token_width, hidden, rng);
    fc2_             = nn::Linear<T>::make(params_, "repa_head/fc2", hidden, feature_dim, rng);
}

template <class T>
ag::Var<T> AlignmentHead<T>::operator()(const ag::Var<T>& tokens) const {
    return fc2_(ag::silu(fc1_(tokens)));
}

template <class T>
ag::Var<T> pool_to_tokens(const ag::Var<T>& features, int grid_h, int grid_w) {
    require(features.shape().size() == 4, kModule, "reference features must be NCHW");
    const int h = features.dim(2), w = features.dim(3);
    require(h % grid_h == 0 && w % grid_w == 0 && h / grid_h == w / grid_w, kModule,
            "reference grid " + std::to_string(h) + "x" + std::to_string(w) + " does not pool onto token grid " +
                std::to_string(grid_h) + "x" + std::to_string(grid_w));
    auto pooled = h == grid_h ? features : ag::avg_pool(features, h / grid_h);
    return ag::nchw_to_tokens(pooled);
}

template <class T>
ag::Var<T> alignment_loss(const ag::Var<T>& projected, const ag::Var<T>& reference) {
    require(projected.shape() == reference.shape(), kModule,
            "alignment_loss: token grid mismatch " + shape_str(projected.shape()) + " vs " +
                shape_str(reference.shape()));
    const int c    = projected.shape().back();
    const int rows = static_cast<int>(projected.size()) / c;
    auto cos       = ag::cosine_rows(ag::reshape(projected, {rows, c}), ag::reshape(reference, {rows, c}));
    return ag::sub(ag::constant(Tensor<T>({}, T(1))), ag::mean(cos));
}

template <class T>
ag::Var<T> repa_loss(const ag::Var<T>& hidden_tokens, const ag::Var<T>& reference_features, const AlignmentHead<T>& head,
                     int grid_h, int grid_w) {
    auto ref = pool_to_tokens(reference_features, grid_h, grid_w);
    require(hidden_tokens.dim(1) == ref.dim(1), kModule, "hidden token count does not match the reference grid");
    return alignment_loss(head(hidden_tokens), ref);
}

#define SSDD_INSTANTIATE_FEATURES(T)                                                                               \
    template class FeatureExtractor<T>;                                                                            \
    template class ToyExtractor<T>;                                                                                \
    template class AlignmentHead<T>;                                                                               \
    template ag::Var<T> perceptual_loss(const ag::Var<T>&, const ag::Var<T>&, const FeatureExtractor<T>&);         \
    template double perceptual_distance(const Tensor<T>&, const Tensor<T>&, const FeatureExtractor<T>&);           \
    template ag::Var<T> pool_to_tokens(const ag::Var<T>&, int, int);                                               \
    template ag::Var<T> alignment_loss(const ag::Var<T>&, const ag::Var<T>&);                                      \
    template ag::Var<T> repa_loss(const ag::Var<T>&, const ag::Var<T>&, const AlignmentHead<T>&, int, int);

SSDD_INSTANTIATE_FEATURES(float)
SSDD_INSTANTIATE_FEATURES(double)

}  // namespace ssdd
