#pragma once

// Feature extractors and the two feature-space losses used in training:
// a perceptual distance between unit-normalized feature maps and a cosine
// alignment between projected decoder tokens and reference features.
//
// The bundled extractor is a small random convolutional pyramid, frozen
// after construction. Other backbones plug in through FeatureExtractor.

#include "ssdd/autograd.hpp"
#include "ssdd/nn.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ssdd {

template <class T>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    // name plus a fingerprint of the weights, e.g. "toy-conv3/1234/9f0c...".
    virtual std::string identity() const = 0;
    // Per-tap [C, H, W] for an input of the given resolution; throws if the
    // resolution is unsupported.
    virtual std::vector<Shape> output_shapes(int height, int width) const = 0;
    // One NCHW map per tap. Gradients flow to the image, never to weights.
    virtual std::vector<ag::Var<T>> features(const ag::Var<T>& image) const = 0;

    // Spatial means of every tap concatenated: [B, sum C]. Used by the
    // distribution metrics.
    Tensor<T> pooled(const Tensor<T>& image) const;
    int pooled_dim(int height, int width) const;
};

// Three 3x3 conv + SiLU stages (16, 32, 64 channels; strides 1, 2, 2),
// weights drawn once from `seed`.
template <class T>
class ToyExtractor final : public FeatureExtractor<T> {
public:
    explicit ToyExtractor(std::uint64_t seed);

    std::string identity() const override { return identity_; }
    std::vector<Shape> output_shapes(int height, int width) const override;
    std::vector<ag::Var<T>> features(const ag::Var<T>& image) const override;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    nn::ParamStore<T> params_;
    std::vector<nn::Conv2d<T>> convs_;
    std::string identity_;
};

template <class T>
std::unique_ptr<FeatureExtractor<T>> toy_extractor(std::uint64_t seed) {
    return std::make_unique<ToyExtractor<T>>(seed);
}

// Uniform mean over taps of the per-pixel squared distance between
// channel-normalized features (summed over channels, averaged over pixels
// and batch).
template <class T>
ag::Var<T> perceptual_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat, const FeatureExtractor<T>& extractor);
template <class T>
double perceptual_distance(const Tensor<T>& x, const Tensor<T>& x_hat, const FeatureExtractor<T>& extractor);

// Two-layer perceptron from decoder tokens to reference feature width.
template <class T>
class AlignmentHead {
public:
    AlignmentHead() = default;
    AlignmentHead(int token_width, int feature_dim, std::uint64_t seed);

    // tokens [B, N, W] -> [B, N, feature_dim]
    ag::Var<T> operator()(const ag::Var<T>& tokens) const;

    int feature_dim() const { return feature_dim_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

private:
    int feature_dim_ = 0;
    nn::ParamStore<T> params_;
    nn::Linear<T> fc1_, fc2_;
};

// Average-pools reference features [B, C, h, w] onto a gh x gw token grid and
// returns tokens [B, gh*gw, C].
template <class T>
ag::Var<T> pool_to_tokens(const ag::Var<T>& features, int grid_h, int grid_w);

// mean over tokens of 1 - cos(projected, reference); both [B, N, C].
template <class T>
ag::Var<T> alignment_loss(const ag::Var<T>& projected, const ag::Var<T>& reference);

// Full alignment term: head(hidden_tokens) against the extractor's deepest
// tap pooled to the token grid.
template <class T>
ag::Var<T> repa_loss(const ag::Var<T>& hidden_tokens, const ag::Var<T>& reference_features, const AlignmentHead<T>& head,
                     int grid_h, int grid_w);

}  // namespace ssdd
