#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops record their inputs and a
// backward closure only when gradients are enabled and some input requires
// them; otherwise the result is a plain leaf. Backward walks the graph in
// reverse topological order and accumulates into every node that requires
// grad. Instantiated for float (training) and double (gradient checks).

#include "ssdd/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ssdd::ag {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad      = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (!has_grad) {
            grad     = Tensor<T>(value.shape());
            has_grad = true;
        }
        return grad;
    }
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value         = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int i) const { return node_->value.dim(i); }
    std::size_t size() const { return node_->value.size(); }
    T item() const { return node_->value[0]; }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool has_grad() const noexcept { return node_ && node_->has_grad; }
    // Zero tensor when no gradient has reached this node.
    Tensor<T> grad() const { return node_->has_grad ? node_->grad : Tensor<T>(node_->value.shape()); }
    Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() {
        if (node_->has_grad) node_->grad.fill(T(0));
    }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    // Seeds d(self)/d(self) = 1; self must hold a single element.
    void backward();

    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&)            = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

// ---- elementwise and reductions ----
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> exp(const Var<T>& a);
template <class T> Var<T> silu(const Var<T>& a);
template <class T> Var<T> clamp(const Var<T>& a, T lo, T hi);
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
// mean((a - b)^2)
template <class T> Var<T> mse(const Var<T>& a, const Var<T>& b);
// Multiplies batch item i (leading axis) by s[i].
template <class T> Var<T> scale_per_sample(const Var<T>& a, std::span<const T> s);

// ---- shape ----
template <class T> Var<T> reshape(const Var<T>& a, Shape shape);
template <class T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> slice_channels(const Var<T>& a, int start, int count);
template <class T> Var<T> upsample_nearest(const Var<T>& a, int factor);
template <class T> Var<T> avg_pool(const Var<T>& a, int factor);
// [B,C,H,W] -> [B,C]
template <class T> Var<T> mean_spatial(const Var<T>& a);
// [B,C,H,W] <-> [B,H*W,C]
template <class T> Var<T> nchw_to_tokens(const Var<T>& a);
template <class T> Var<T> tokens_to_nchw(const Var<T>& a, int h, int w);

// ---- layers ----
// x [..., in], w [out, in], bias [out] or empty -> [..., out]
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);
// x [B,C,H,W], w [O,C,k,k], bias [O] or empty; zero padding.
template <class T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad);
// Normalizes each (batch, group) of an NCHW tensor to zero mean, unit variance.
template <class T> Var<T> group_norm(const Var<T>& x, int groups, T eps = T(1e-5));
// Normalizes over the last axis.
template <class T> Var<T> layer_norm(const Var<T>& x, T eps = T(1e-5));
// x * gamma + beta per channel; channels_last selects [B,N,C] instead of NCHW.
template <class T>
Var<T> affine(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, bool channels_last);
// ss [B, 2C] packs (scale, shift): x * (1 + scale) + shift per batch and channel.
template <class T> Var<T> modulate(const Var<T>& x, const Var<T>& ss, bool channels_last);
// x [R, 2H] -> x[:, :H] * gelu(x[:, H:])
template <class T> Var<T> geglu(const Var<T>& x);

// Multi-head self-attention over a token grid. qkv [B, N, 3W] with N =
// grid_h * grid_w; token pairs further than max_dist apart on either axis are
// masked out; rel_bias [heads, (2*max_dist+1)^2] is a learned additive bias
// indexed by the (row, col) offset. Returns [B, N, W].
template <class T>
Var<T> window_attention(const Var<T>& qkv, const Var<T>& rel_bias, int heads, int grid_h, int grid_w, int max_dist);

// Softmax weights [B, heads, N, N] exactly as used by window_attention.
template <class T>
Tensor<T> window_attention_weights(const Tensor<T>& qkv, const Tensor<T>& rel_bias, int heads, int grid_h, int grid_w,
                                   int max_dist);

// mean over elements of 0.5 * (mu^2 + exp(logvar) - 1 - logvar)
template <class T> Var<T> kl_normal(const Var<T>& mean, const Var<T>& logvar);
// x / (||x||_channels + eps) at every pixel of an NCHW tensor.
template <class T> Var<T> channel_unit_normalize(const Var<T>& x, T eps = T(1e-10));
// Row-wise cosine similarity of [R, D] tensors -> [R].
template <class T> Var<T> cosine_rows(const Var<T>& a, const Var<T>& b, T eps = T(1e-8));

// Operator sugar for the common arithmetic.
template <class T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

}  // namespace ssdd::ag
