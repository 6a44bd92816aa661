#include "ssdd/autograd.hpp"

#include "ssdd/simd.hpp"

#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <limits>
#include <numbers>
#include <unordered_set>

namespace {

// Activations and gradients are large, short-lived buffers. Keeping them on
// the heap instead of fresh mmap regions avoids a page-fault storm per step.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    return true;
}();

}  // namespace

namespace ssdd::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using Backward = std::function<void(Node<T>&)>;

template <class T>
Var<T> make_op(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, Backward<T> backward) {
    auto node   = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const Var<T>* in : inputs) {
            any = any || (in && in->requires_grad());
        }
        if (any) {
            node->requires_grad = true;
            for (const Var<T>* in : inputs) {
                node->parents.push_back(in && *in ? in->node() : nullptr);
            }
            node->backward = std::move(backward);
        }
    }
    return Var<T>(std::move(node));
}

// Gradient buffer of parent i, or nullptr when that input needs no gradient.
template <class T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
    if (i >= self.parents.size() || !self.parents[i] || !self.parents[i]->requires_grad) {
        return nullptr;
    }
    return &self.parents[i]->grad_buffer();
}

template <class T>
const Tensor<T>& parent_value(Node<T>& self, std::size_t i) {
    return self.parents[i]->value;
}

void check_same(const Shape& a, const Shape& b, const char* op) {
    require(a == b, "autograd", std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_rank(const Shape& s, int rank, const char* op) {
    require(static_cast<int>(s.size()) == rank, "autograd",
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
void Var<T>::backward() {
    require(node_ && node_->value.size() == 1, "autograd", "backward() needs a single-element root");
    if (!node_->requires_grad) {
        return;
    }
    // `order` holds owning handles so clearing parents below cannot free a
    // node that is still to be visited.
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{node_, 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            const auto& p = n->parents[next++];
            if (p && p->requires_grad && visited.insert(p.get()).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& n = **it;
        if (n.backward && n.has_grad) {
            n.backward(n);
        }
    }
    for (auto& n : order) {
        if (n != node_ && n->backward) {
            n->backward = nullptr;
            n->parents.clear();
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise and reductions

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    simd::axpby(out.size(), T(1), b.value().data(), T(1), out.data());
    return make_op<T>(std::move(out), {&a, &b}, [](Node<T>& self) {
        for (std::size_t i = 0; i < 2; ++i) {
            if (auto* g = parent_grad(self, i)) {
                simd::axpby(g->size(), T(1), self.grad.data(), T(1), g->data());
            }
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same(a.shape(), b.shape(), "sub");
    Tensor<T> out = a.value();
    simd::axpby(out.size(), T(-1), b.value().data(), T(1), out.data());
    return make_op<T>(std::move(out), {&a, &b}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) simd::axpby(g->size(), T(1), self.grad.data(), T(1), g->data());
        if (auto* g = parent_grad(self, 1)) simd::axpby(g->size(), T(-1), self.grad.data(), T(1), g->data());
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] * b.value()[i];
    }
    return make_op<T>(std::move(out), {&a, &b}, [](Node<T>& self) {
        const auto& av = parent_value(self, 0);
        const auto& bv = parent_value(self, 1);
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out) v *= s;
    return make_op<T>(std::move(out), {&a}, [s](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) simd::axpby(g->size(), s, self.grad.data(), T(1), g->data());
    });
}

template <class T>
Var<T> exp(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out) v = std::exp(v);
    return make_op<T>(std::move(out), {&a}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * self.value[i];
        }
    });
}

template <class T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out) v = v * sigmoid(v);
    return make_op<T>(std::move(out), {&a}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const auto& x = parent_value(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T s = sigmoid(x[i]);
                (*g)[i] += self.grad[i] * s * (T(1) + x[i] * (T(1) - s));
            }
        }
    });
}

template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out = a.value();
    for (auto& v : out) v = std::clamp(v, lo, hi);
    return make_op<T>(std::move(out), {&a}, [lo, hi](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const auto& x = parent_value(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (x[i] > lo && x[i] < hi) (*g)[i] += self.grad[i];
            }
        }
    });
}

template <class T>
Var<T> sum(const Var<T>& a) {
    long double s = 0;
    for (T v : a.value()) s += v;
    return make_op<T>(Tensor<T>({}, {static_cast<T>(s)}), {&a}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const T d = self.grad[0];
            for (auto& v : *g) v += d;
        }
    });
}

template <class T>
Var<T> mean(const Var<T>& a) {
    require(a.size() > 0, "autograd", "mean of an empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    check_same(a.shape(), b.shape(), "mse");
    require(a.size() > 0, "autograd", "mse of empty tensors");
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long double d = static_cast<long double>(a.value()[i]) - b.value()[i];
        s += d * d;
    }
    const T n = static_cast<T>(a.size());
    return make_op<T>(Tensor<T>({}, {static_cast<T>(s / n)}), {&a, &b}, [n](Node<T>& self) {
        const auto& av = parent_value(self, 0);
        const auto& bv = parent_value(self, 1);
        const T k      = T(2) * self.grad[0] / n;
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * (av[i] - bv[i]);
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= k * (av[i] - bv[i]);
        }
    });
}

template <class T>
Var<T> scale_per_sample(const Var<T>& a, std::span<const T> s) {
    require(a.value().rank() >= 1 && static_cast<int>(s.size()) == a.dim(0), "autograd",
            "scale_per_sample: need one factor per batch item");
    std::vector<T> factors(s.begin(), s.end());
    const std::size_t inner = a.size() / factors.size();
    Tensor<T> out           = a.value();
    for (std::size_t b = 0; b < factors.size(); ++b) {
        for (std::size_t i = 0; i < inner; ++i) out[b * inner + i] *= factors[b];
    }
    return make_op<T>(std::move(out), {&a}, [factors, inner](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t b = 0; b < factors.size(); ++b) {
                simd::axpby(inner, factors[b], self.grad.data() + b * inner, T(1), g->data() + b * inner);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// shape

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return make_op<T>(std::move(out), {&a}, [](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) simd::axpby(g->size(), T(1), self.grad.data(), T(1), g->data());
    });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    check_rank(a.shape(), 4, "concat_channels");
    check_rank(b.shape(), 4, "concat_channels");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    require(b.dim(0) == n && b.dim(2) == h && b.dim(3) == w, "autograd",
            "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor<T> out({n, ca + cb, h, w});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.value().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(b.value().data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
    }
    return make_op<T>(std::move(out), {&a, &b}, [n, ca, cb, hw](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (int i = 0; i < n; ++i)
                simd::axpby(ca * hw, T(1), self.grad.data() + i * (ca + cb) * hw, T(1), g->data() + i * ca * hw);
        }
        if (auto* g = parent_grad(self, 1)) {
            for (int i = 0; i < n; ++i)
                simd::axpby(cb * hw, T(1), self.grad.data() + (i * (ca + cb) + ca) * hw, T(1), g->data() + i * cb * hw);
        }
    });
}

template <class T>
Var<T> slice_channels(const Var<T>& a, int start, int count) {
    check_rank(a.shape(), 4, "slice_channels");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    require(start >= 0 && count > 0 && start + count <= c, "autograd", "slice_channels out of range");
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor<T> out({n, count, h, w});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.value().data() + (i * c + start) * hw, count * hw, out.data() + i * count * hw);
    }
    return make_op<T>(std::move(out), {&a}, [n, c, start, count, hw](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (int i = 0; i < n; ++i)
                simd::axpby(count * hw, T(1), self.grad.data() + i * count * hw, T(1), g->data() + (i * c + start) * hw);
        }
    });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& a, int factor) {
    check_rank(a.shape(), 4, "upsample_nearest");
    require(factor >= 1, "autograd", "upsample factor must be positive");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const int ho = h * factor, wo = w * factor;
    Tensor<T> out({n, c, ho, wo});
    const T* src = a.value().data();
    T* dst       = out.data();
    for (int p = 0; p < n * c; ++p) {
        for (int y = 0; y < ho; ++y) {
            const T* row = src + (static_cast<std::size_t>(p) * h + y / factor) * w;
            T* orow      = dst + (static_cast<std::size_t>(p) * ho + y) * wo;
            for (int x = 0; x < wo; ++x) orow[x] = row[x / factor];
        }
    }
    return make_op<T>(std::move(out), {&a}, [n, c, h, w, factor](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const int ho = h * factor, wo = w * factor;
            for (int p = 0; p < n * c; ++p) {
                for (int y = 0; y < ho; ++y) {
                    T* row        = g->data() + (static_cast<std::size_t>(p) * h + y / factor) * w;
                    const T* grow = self.grad.data() + (static_cast<std::size_t>(p) * ho + y) * wo;
                    for (int x = 0; x < wo; ++x) row[x / factor] += grow[x];
                }
            }
        }
    });
}

template <class T>
Var<T> avg_pool(const Var<T>& a, int factor) {
    check_rank(a.shape(), 4, "avg_pool");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    require(factor >= 1 && h % factor == 0 && w % factor == 0, "autograd",
            "avg_pool: " + shape_str(a.shape()) + " not divisible by " + std::to_string(factor));
    const int ho = h / factor, wo = w / factor;
    const T inv  = T(1) / static_cast<T>(factor * factor);
    Tensor<T> out({n, c, ho, wo});
    for (int p = 0; p < n * c; ++p) {
        for (int y = 0; y < h; ++y) {
            const T* row = a.value().data() + (static_cast<std::size_t>(p) * h + y) * w;
            T* orow      = out.data() + (static_cast<std::size_t>(p) * ho + y / factor) * wo;
            for (int x = 0; x < w; ++x) orow[x / factor] += row[x] * inv;
        }
    }
    return make_op<T>(std::move(out), {&a}, [n, c, h, w, factor, inv](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const int ho = h / factor, wo = w / factor;
            for (int p = 0; p < n * c; ++p) {
                for (int y = 0; y < h; ++y) {
                    T* row        = g->data() + (static_cast<std::size_t>(p) * h + y) * w;
                    const T* grow = self.grad.data() + (static_cast<std::size_t>(p) * ho + y / factor) * wo;
                    for (int x = 0; x < w; ++x) row[x] += grow[x / factor] * inv;
                }
            }
        }
    });
}

template <class T>
Var<T> mean_spatial(const Var<T>& a) {
    check_rank(a.shape(), 4, "mean_spatial");
    const int n = a.dim(0), c = a.dim(1);
    const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    Tensor<T> out({n, c});
    for (int p = 0; p < n * c; ++p) {
        long double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += a.value()[p * hw + i];
        out[p] = static_cast<T>(s / static_cast<long double>(hw));
    }
    return make_op<T>(std::move(out), {&a}, [n, c, hw](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (int p = 0; p < n * c; ++p) {
                const T d = self.grad[p] / static_cast<T>(hw);
                for (std::size_t i = 0; i < hw; ++i) (*g)[p * hw + i] += d;
            }
        }
    });
}

template <class T>
Var<T> nchw_to_tokens(const Var<T>& a) {
    check_rank(a.shape(), 4, "nchw_to_tokens");
    const int n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor<T> out({n, hw, c});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p) out[(static_cast<std::size_t>(b) * hw + p) * c + ch] = a.value()[(static_cast<std::size_t>(b) * c + ch) * hw + p];
    return make_op<T>(std::move(out), {&a}, [n, c, hw](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch)
                    for (int p = 0; p < hw; ++p)
                        (*g)[(static_cast<std::size_t>(b) * c + ch) * hw + p] += self.grad[(static_cast<std::size_t>(b) * hw + p) * c + ch];
        }
    });
}

template <class T>
Var<T> tokens_to_nchw(const Var<T>& a, int h, int w) {
    check_rank(a.shape(), 3, "tokens_to_nchw");
    const int n = a.dim(0), hw = a.dim(1), c = a.dim(2);
    require(hw == h * w, "autograd", "tokens_to_nchw: token count does not match grid");
    Tensor<T> out({n, c, h, w});
    for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p)
            for (int ch = 0; ch < c; ++ch) out[(static_cast<std::size_t>(b) * c + ch) * hw + p] = a.value()[(static_cast<std::size_t>(b) * hw + p) * c + ch];
    return make_op<T>(std::move(out), {&a}, [n, c, hw](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            for (int b = 0; b < n; ++b)
                for (int p = 0; p < hw; ++p)
                    for (int ch = 0; ch < c; ++ch)
                        (*g)[(static_cast<std::size_t>(b) * hw + p) * c + ch] += self.grad[(static_cast<std::size_t>(b) * c + ch) * hw + p];
        }
    });
}

// ---------------------------------------------------------------------------
// layers

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    check_rank(w.shape(), 2, "linear");
    const int out_f = w.dim(0), in_f = w.dim(1);
    require(x.value().rank() >= 1 && x.dim(-1) == in_f, "autograd",
            "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias) require(bias.size() == static_cast<std::size_t>(out_f), "autograd", "linear: bias size");
    const int rows = static_cast<int>(x.size() / in_f);
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    Tensor<T> out(out_shape);
    simd::gemm<T>(false, true, rows, out_f, in_f, T(1), x.value().data(), in_f, w.value().data(), in_f, T(0), out.data(),
                  out_f);
    if (has_bias) {
        for (int r = 0; r < rows; ++r)
            simd::axpby<T>(out_f, T(1), bias.value().data(), T(1), out.data() + static_cast<std::size_t>(r) * out_f);
    }
    return make_op<T>(std::move(out), {&x, &w, &bias}, [rows, in_f, out_f](Node<T>& self) {
        const auto& xv = parent_value(self, 0);
        const auto& wv = parent_value(self, 1);
        if (auto* g = parent_grad(self, 0)) {
            simd::gemm<T>(false, false, rows, in_f, out_f, T(1), self.grad.data(), out_f, wv.data(), in_f, T(1),
                          g->data(), in_f);
        }
        if (auto* g = parent_grad(self, 1)) {
            simd::gemm<T>(true, false, out_f, in_f, rows, T(1), self.grad.data(), out_f, xv.data(), in_f, T(1),
                          g->data(), in_f);
        }
        if (auto* g = parent_grad(self, 2)) {
            for (int r = 0; r < rows; ++r)
                simd::axpby<T>(out_f, T(1), self.grad.data() + static_cast<std::size_t>(r) * out_f, T(1), g->data());
        }
    });
}

namespace {

struct ConvGeom {
    int n, c, h, w, o, k, stride, pad, ho, wo;
    std::size_t cols() const { return static_cast<std::size_t>(n) * ho * wo; }
    std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
};

// col[(ci*k + ki)*k + kj][b*ho*wo + oy*wo + ox]
template <class T>
void im2col(const ConvGeom& g, const T* x, T* col) {
    const std::size_t ncols = g.cols();
    const int hw_o          = g.ho * g.wo;
    for (int ci = 0; ci < g.c; ++ci) {
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                T* dst = col + (static_cast<std::size_t>(ci * g.k + ki) * g.k + kj) * ncols;
                for (int b = 0; b < g.n; ++b) {
                    const T* src = x + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
                    T* d         = dst + static_cast<std::size_t>(b) * hw_o;
                    for (int oy = 0; oy < g.ho; ++oy) {
                        const int iy = oy * g.stride - g.pad + ki;
                        T* drow      = d + oy * g.wo;
                        if (iy < 0 || iy >= g.h) {
                            std::fill(drow, drow + g.wo, T(0));
                            continue;
                        }
                        const T* srow = src + static_cast<std::size_t>(iy) * g.w;
                        if (g.stride == 1) {
                            const int shift = kj - g.pad;
                            const int lo    = std::max(0, -shift);
                            const int hi    = std::min(g.wo, g.w - shift);
                            std::fill(drow, drow + std::max(lo, 0), T(0));
                            if (hi > lo) std::copy(srow + lo + shift, srow + hi + shift, drow + lo);
                            std::fill(drow + std::max(hi, lo), drow + g.wo, T(0));
                        } else {
                            for (int ox = 0; ox < g.wo; ++ox) {
                                const int ix = ox * g.stride - g.pad + kj;
                                drow[ox]     = (ix >= 0 && ix < g.w) ? srow[ix] : T(0);
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* col, T* x) {
    const std::size_t ncols = g.cols();
    const int hw_o          = g.ho * g.wo;
    for (int ci = 0; ci < g.c; ++ci) {
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                const T* srcc = col + (static_cast<std::size_t>(ci * g.k + ki) * g.k + kj) * ncols;
                for (int b = 0; b < g.n; ++b) {
                    T* dst      = x + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
                    const T* s  = srcc + static_cast<std::size_t>(b) * hw_o;
                    for (int oy = 0; oy < g.ho; ++oy) {
                        const int iy = oy * g.stride - g.pad + ki;
                        if (iy < 0 || iy >= g.h) continue;
                        T* drow       = dst + static_cast<std::size_t>(iy) * g.w;
                        const T* srow = s + oy * g.wo;
                        if (g.stride == 1) {
                            const int shift = kj - g.pad;
                            const int lo    = std::max(0, -shift);
                            const int hi    = std::min(g.wo, g.w - shift);
                            for (int ox = lo; ox < hi; ++ox) drow[ox + shift] += srow[ox];
                            continue;
                        }
                        for (int ox = 0; ox < g.wo; ++ox) {
                            const int ix = ox * g.stride - g.pad + kj;
                            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
std::vector<T>& scratch(int slot) {
    thread_local std::vector<T> buffers[3];
    return buffers[slot];
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad) {
    check_rank(x.shape(), 4, "conv2d");
    check_rank(w.shape(), 4, "conv2d");
    require(w.dim(1) == x.dim(1) && w.dim(2) == w.dim(3), "autograd",
            "conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    require(g.ho > 0 && g.wo > 0, "autograd", "conv2d: empty output");
    const bool has_bias = static_cast<bool>(bias);

    auto& col = scratch<T>(0);
    col.resize(g.rows() * g.cols());
    im2col(g, x.value().data(), col.data());
    auto& ymat = scratch<T>(1);
    ymat.resize(static_cast<std::size_t>(g.o) * g.cols());
    simd::gemm<T>(false, false, g.o, static_cast<int>(g.cols()), static_cast<int>(g.rows()), T(1), w.value().data(),
                  static_cast<int>(g.rows()), col.data(), static_cast<int>(g.cols()), T(0), ymat.data(),
                  static_cast<int>(g.cols()));

    const std::size_t hw_o = static_cast<std::size_t>(g.ho) * g.wo;
    Tensor<T> out({g.n, g.o, g.ho, g.wo});
    for (int b = 0; b < g.n; ++b) {
        for (int oc = 0; oc < g.o; ++oc) {
            const T* src = ymat.data() + static_cast<std::size_t>(oc) * g.cols() + b * hw_o;
            T* dst       = out.data() + (static_cast<std::size_t>(b) * g.o + oc) * hw_o;
            const T bv   = has_bias ? bias.value()[oc] : T(0);
            for (std::size_t p = 0; p < hw_o; ++p) dst[p] = src[p] + bv;
        }
    }

    return make_op<T>(std::move(out), {&x, &w, &bias}, [g](Node<T>& self) {
        const std::size_t hw_o = static_cast<std::size_t>(g.ho) * g.wo;
        const int ncols        = static_cast<int>(g.cols());
        const int nrows        = static_cast<int>(g.rows());
        auto& dy               = scratch<T>(1);
        dy.resize(static_cast<std::size_t>(g.o) * g.cols());
        for (int b = 0; b < g.n; ++b)
            for (int oc = 0; oc < g.o; ++oc)
                std::copy_n(self.grad.data() + (static_cast<std::size_t>(b) * g.o + oc) * hw_o, hw_o,
                            dy.data() + static_cast<std::size_t>(oc) * g.cols() + b * hw_o);

        if (auto* gb = parent_grad(self, 2)) {
            for (int oc = 0; oc < g.o; ++oc) {
                double s     = 0;
                const T* row = dy.data() + static_cast<std::size_t>(oc) * g.cols();
                for (int j = 0; j < ncols; ++j) s += row[j];
                (*gb)[oc] += static_cast<T>(s);
            }
        }
        auto* gw = parent_grad(self, 1);
        auto* gx = parent_grad(self, 0);
        if (gw) {
            auto& col = scratch<T>(0);
            col.resize(g.rows() * g.cols());
            im2col(g, parent_value(self, 0).data(), col.data());
            simd::gemm<T>(false, true, g.o, nrows, ncols, T(1), dy.data(), ncols, col.data(), ncols, T(1), gw->data(),
                          nrows);
        }
        if (gx) {
            auto& dcol = scratch<T>(2);
            dcol.resize(g.rows() * g.cols());
            simd::gemm<T>(true, false, nrows, ncols, g.o, T(1), parent_value(self, 1).data(), nrows, dy.data(), ncols,
                          T(0), dcol.data(), ncols);
            col2im_add(g, dcol.data(), gx->data());
        }
    });
}

namespace {

// Normalizes `groups` contiguous blocks of `block` elements with a stride
// pattern handled by the caller; shared by group and layer norm.
template <class T>
void normalize_blocks(const T* x, T* y, std::size_t nblocks, std::size_t block, T eps, std::vector<T>& rstd) {
    rstd.resize(nblocks);
    for (std::size_t b = 0; b < nblocks; ++b) {
        const T* xb = x + b * block;
        double m    = 0;
        for (std::size_t i = 0; i < block; ++i) m += xb[i];
        m /= static_cast<double>(block);
        double v = 0;
        for (std::size_t i = 0; i < block; ++i) {
            const double d = xb[i] - m;
            v += d * d;
        }
        v /= static_cast<double>(block);
        const double r = 1.0 / std::sqrt(v + static_cast<double>(eps));
        rstd[b]        = static_cast<T>(r);
        T* yb          = y + b * block;
        for (std::size_t i = 0; i < block; ++i) yb[i] = static_cast<T>((xb[i] - m) * r);
    }
}

template <class T>
void normalize_blocks_backward(const T* y, const T* dy, T* dx, std::size_t nblocks, std::size_t block,
                               const std::vector<T>& rstd) {
    for (std::size_t b = 0; b < nblocks; ++b) {
        const T* yb  = y + b * block;
        const T* dyb = dy + b * block;
        double mdy = 0, mdyy = 0;
        for (std::size_t i = 0; i < block; ++i) {
            mdy += dyb[i];
            mdyy += static_cast<double>(dyb[i]) * yb[i];
        }
        mdy /= static_cast<double>(block);
        mdyy /= static_cast<double>(block);
        T* dxb = dx + b * block;
        for (std::size_t i = 0; i < block; ++i) dxb[i] += static_cast<T>(rstd[b] * (dyb[i] - mdy - yb[i] * mdyy));
    }
}

}  // namespace

template <class T>
Var<T> group_norm(const Var<T>& x, int groups, T eps) {
    check_rank(x.shape(), 4, "group_norm");
    const int c = x.dim(1);
    require(groups > 0 && c % groups == 0, "autograd",
            "group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
    const std::size_t nblocks = static_cast<std::size_t>(x.dim(0)) * groups;
    const std::size_t block   = x.size() / nblocks;
    Tensor<T> out(x.shape());
    auto rstd = std::make_shared<std::vector<T>>();
    normalize_blocks(x.value().data(), out.data(), nblocks, block, eps, *rstd);
    return make_op<T>(std::move(out), {&x}, [nblocks, block, rstd](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            normalize_blocks_backward(self.value.data(), self.grad.data(), g->data(), nblocks, block, *rstd);
        }
    });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, T eps) {
    require(x.value().rank() >= 1, "autograd", "layer_norm of a scalar");
    const std::size_t block   = static_cast<std::size_t>(x.dim(-1));
    const std::size_t nblocks = x.size() / block;
    Tensor<T> out(x.shape());
    auto rstd = std::make_shared<std::vector<T>>();
    normalize_blocks(x.value().data(), out.data(), nblocks, block, eps, *rstd);
    return make_op<T>(std::move(out), {&x}, [nblocks, block, rstd](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            normalize_blocks_backward(self.value.data(), self.grad.data(), g->data(), nblocks, block, *rstd);
        }
    });
}

namespace {

// Index helpers for per-(batch, channel) broadcasting over NCHW or [B,N,C].
struct ChannelLayout {
    int n, c;
    std::size_t s;  // spatial / token count
    bool channels_last;
    std::size_t index(int b, int ch, std::size_t p) const {
        return channels_last ? (static_cast<std::size_t>(b) * s + p) * c + ch : (static_cast<std::size_t>(b) * c + ch) * s + p;
    }
};

ChannelLayout layout_of(const Shape& shape, bool channels_last) {
    require(shape.size() >= 2, "autograd", "channel op needs rank >= 2");
    ChannelLayout l{};
    l.n             = shape[0];
    l.channels_last = channels_last;
    if (channels_last) {
        l.c = shape.back();
        l.s = shape_numel(shape) / (static_cast<std::size_t>(l.n) * l.c);
    } else {
        l.c = shape[1];
        l.s = shape_numel(shape) / (static_cast<std::size_t>(l.n) * l.c);
    }
    return l;
}

}  // namespace

template <class T>
Var<T> affine(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, bool channels_last) {
    const auto l = layout_of(x.shape(), channels_last);
    require(gamma.size() == static_cast<std::size_t>(l.c) && beta.size() == static_cast<std::size_t>(l.c), "autograd",
            "affine: parameter size does not match channels");
    Tensor<T> out(x.shape());
    for (int b = 0; b < l.n; ++b)
        for (int ch = 0; ch < l.c; ++ch)
            for (std::size_t p = 0; p < l.s; ++p) {
                const auto i = l.index(b, ch, p);
                out[i]       = x.value()[i] * gamma.value()[ch] + beta.value()[ch];
            }
    return make_op<T>(std::move(out), {&x, &gamma, &beta}, [l](Node<T>& self) {
        const auto& xv = parent_value(self, 0);
        const auto& gv = parent_value(self, 1);
        auto* gx       = parent_grad(self, 0);
        auto* gg       = parent_grad(self, 1);
        auto* gb       = parent_grad(self, 2);
        for (int b = 0; b < l.n; ++b)
            for (int ch = 0; ch < l.c; ++ch)
                for (std::size_t p = 0; p < l.s; ++p) {
                    const auto i = l.index(b, ch, p);
                    const T d    = self.grad[i];
                    if (gx) (*gx)[i] += d * gv[ch];
                    if (gg) (*gg)[ch] += d * xv[i];
                    if (gb) (*gb)[ch] += d;
                }
    });
}

template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& ss, bool channels_last) {
    const auto l = layout_of(x.shape(), channels_last);
    require(ss.value().rank() == 2 && ss.dim(0) == l.n && ss.dim(1) == 2 * l.c, "autograd",
            "modulate: scale/shift " + shape_str(ss.shape()) + " does not match " + shape_str(x.shape()));
    Tensor<T> out(x.shape());
    const auto& sv = ss.value();
    for (int b = 0; b < l.n; ++b)
        for (int ch = 0; ch < l.c; ++ch) {
            const T sc = T(1) + sv[static_cast<std::size_t>(b) * 2 * l.c + ch];
            const T sh = sv[static_cast<std::size_t>(b) * 2 * l.c + l.c + ch];
            for (std::size_t p = 0; p < l.s; ++p) {
                const auto i = l.index(b, ch, p);
                out[i]       = x.value()[i] * sc + sh;
            }
        }
    return make_op<T>(std::move(out), {&x, &ss}, [l](Node<T>& self) {
        const auto& xv = parent_value(self, 0);
        const auto& sv = parent_value(self, 1);
        auto* gx       = parent_grad(self, 0);
        auto* gs       = parent_grad(self, 1);
        for (int b = 0; b < l.n; ++b)
            for (int ch = 0; ch < l.c; ++ch) {
                const T sc  = T(1) + sv[static_cast<std::size_t>(b) * 2 * l.c + ch];
                double dsc = 0, dsh = 0;
                for (std::size_t p = 0; p < l.s; ++p) {
                    const auto i = l.index(b, ch, p);
                    const T d    = self.grad[i];
                    if (gx) (*gx)[i] += d * sc;
                    dsc += static_cast<double>(d) * xv[i];
                    dsh += d;
                }
                if (gs) {
                    (*gs)[static_cast<std::size_t>(b) * 2 * l.c + ch] += static_cast<T>(dsc);
                    (*gs)[static_cast<std::size_t>(b) * 2 * l.c + l.c + ch] += static_cast<T>(dsh);
                }
            }
    });
}

template <class T>
Var<T> geglu(const Var<T>& x) {
    require(x.value().rank() >= 1 && x.dim(-1) % 2 == 0, "autograd", "geglu: last axis must be even");
    const int two_h         = x.dim(-1);
    const int h             = two_h / 2;
    const std::size_t rows  = x.size() / two_h;
    Shape out_shape         = x.shape();
    out_shape.back()        = h;
    Tensor<T> out(out_shape);
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.value().data() + r * two_h;
        for (int j = 0; j < h; ++j) {
            const T gte            = xr[h + j];
            const T gelu           = T(0.5) * gte * (T(1) + std::erf(gte * inv_sqrt2));
            out[r * h + j]         = xr[j] * gelu;
        }
    }
    return make_op<T>(std::move(out), {&x}, [rows, h, inv_sqrt2](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
            const auto& xv   = parent_value(self, 0);
            const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = xv.data() + r * 2 * h;
                T* gr       = g->data() + r * 2 * h;
                for (int j = 0; j < h; ++j) {
                    const T a     = xr[j];
                    const T gte   = xr[h + j];
                    const T cdf   = T(0.5) * (T(1) + std::erf(gte * inv_sqrt2));
                    const T gelu  = gte * cdf;
                    const T dgelu = cdf + gte * inv_sqrt_2pi * std::exp(T(-0.5) * gte * gte);
                    const T d     = self.grad[r * h + j];
                    gr[j] += d * gelu;
                    gr[h + j] += d * a * dgelu;
                }
            }
        }
    });
}

template <class T>
Tensor<T> window_attention_weights(const Tensor<T>& qkv, const Tensor<T>& rel_bias, int heads, int grid_h, int grid_w,
                                   int max_dist) {
    require(qkv.rank() == 3 && qkv.dim(2) % 3 == 0, "autograd", "window_attention: qkv must be [B, N, 3W]");
    const int bsz = qkv.dim(0), n = qkv.dim(1), width = qkv.dim(2) / 3;
    require(n == grid_h * grid_w, "autograd", "window_attention: token count does not match grid");
    require(heads > 0 && width % heads == 0, "autograd", "window_attention: width not divisible by heads");
    const int span = 2 * max_dist + 1;
    require(rel_bias.rank() == 2 && rel_bias.dim(0) == heads && rel_bias.dim(1) == span * span, "autograd",
            "window_attention: relative bias must be [heads, (2d+1)^2]");
    const int d        = width / heads;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    Tensor<T> probs({bsz, heads, n, n});
    std::vector<T> logits(n);
    for (int b = 0; b < bsz; ++b) {
        const T* base = qkv.data() + static_cast<std::size_t>(b) * n * 3 * width;
        for (int hd = 0; hd < heads; ++hd) {
            for (int i = 0; i < n; ++i) {
                const int ri = i / grid_w, ci = i % grid_w;
                const T* q   = base + static_cast<std::size_t>(i) * 3 * width + hd * d;
                T mx         = -std::numeric_limits<T>::infinity();
                for (int j = 0; j < n; ++j) {
                    const int dr = j / grid_w - ri, dc = j % grid_w - ci;
                    if (std::abs(dr) > max_dist || std::abs(dc) > max_dist) {
                        logits[j] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* k = base + static_cast<std::size_t>(j) * 3 * width + width + hd * d;
                    T s        = 0;
                    for (int e = 0; e < d; ++e) s += q[e] * k[e];
                    logits[j] = s * inv_sqrt_d + rel_bias[static_cast<std::size_t>(hd) * span * span +
                                                          (dr + max_dist) * span + (dc + max_dist)];
                    mx = std::max(mx, logits[j]);
                }
                T* p    = probs.data() + ((static_cast<std::size_t>(b) * heads + hd) * n + i) * n;
                T total = 0;
                for (int j = 0; j < n; ++j) {
                    p[j] = std::isinf(logits[j]) ? T(0) : std::exp(logits[j] - mx);
                    total += p[j];
                }
                for (int j = 0; j < n; ++j) p[j] /= total;
            }
        }
    }
    return probs;
}

template <class T>
Var<T> window_attention(const Var<T>& qkv, const Var<T>& rel_bias, int heads, int grid_h, int grid_w, int max_dist) {
    auto probs = std::make_shared<Tensor<T>>(
        window_attention_weights(qkv.value(), rel_bias.value(), heads, grid_h, grid_w, max_dist));
    const int bsz = qkv.dim(0), n = qkv.dim(1), width = qkv.dim(2) / 3;
    const int d = width / heads;
    Tensor<T> out({bsz, n, width});
    for (int b = 0; b < bsz; ++b) {
        const T* base = qkv.value().data() + static_cast<std::size_t>(b) * n * 3 * width;
        for (int hd = 0; hd < heads; ++hd) {
            for (int i = 0; i < n; ++i) {
                const T* p = probs->data() + ((static_cast<std::size_t>(b) * heads + hd) * n + i) * n;
                T* o       = out.data() + (static_cast<std::size_t>(b) * n + i) * width + hd * d;
                for (int j = 0; j < n; ++j) {
                    if (p[j] == T(0)) continue;
                    const T* v = base + static_cast<std::size_t>(j) * 3 * width + 2 * width + hd * d;
                    for (int e = 0; e < d; ++e) o[e] += p[j] * v[e];
                }
            }
        }
    }
    return make_op<T>(std::move(out), {&qkv, &rel_bias}, [probs, heads, grid_w, max_dist](Node<T>& self) {
        const auto& qv = parent_value(self, 0);
        const int bsz = qv.dim(0), n = qv.dim(1), width = qv.dim(2) / 3;
        const int d        = width / heads;
        const int span     = 2 * max_dist + 1;
        const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
        auto* gq           = parent_grad(self, 0);
        auto* gb           = parent_grad(self, 1);
        std::vector<T> dp(n);
        for (int b = 0; b < bsz; ++b) {
            const T* base = qv.data() + static_cast<std::size_t>(b) * n * 3 * width;
            T* gbase      = gq ? gq->data() + static_cast<std::size_t>(b) * n * 3 * width : nullptr;
            for (int hd = 0; hd < heads; ++hd) {
                for (int i = 0; i < n; ++i) {
                    const T* p  = probs->data() + ((static_cast<std::size_t>(b) * heads + hd) * n + i) * n;
                    const T* go = self.grad.data() + (static_cast<std::size_t>(b) * n + i) * width + hd * d;
                    T dot_pdp   = 0;
                    for (int j = 0; j < n; ++j) {
                        if (p[j] == T(0)) {
                            dp[j] = 0;
                            continue;
                        }
                        const T* v = base + static_cast<std::size_t>(j) * 3 * width + 2 * width + hd * d;
                        T s        = 0;
                        for (int e = 0; e < d; ++e) s += go[e] * v[e];
                        dp[j] = s;
                        dot_pdp += p[j] * s;
                        if (gbase) {
                            T* gv = gbase + static_cast<std::size_t>(j) * 3 * width + 2 * width + hd * d;
                            for (int e = 0; e < d; ++e) gv[e] += p[j] * go[e];
                        }
                    }
                    const int ri = i / grid_w, ci = i % grid_w;
                    const T* q   = base + static_cast<std::size_t>(i) * 3 * width + hd * d;
                    for (int j = 0; j < n; ++j) {
                        if (p[j] == T(0)) continue;
                        const T dl = p[j] * (dp[j] - dot_pdp);
                        if (gb) {
                            const int dr = j / grid_w - ri, dc = j % grid_w - ci;
                            (*gb)[static_cast<std::size_t>(hd) * span * span + (dr + max_dist) * span + (dc + max_dist)] += dl;
                        }
                        if (gbase) {
                            const T* k = base + static_cast<std::size_t>(j) * 3 * width + width + hd * d;
                            T* gqi     = gbase + static_cast<std::size_t>(i) * 3 * width + hd * d;
                            T* gkj     = gbase + static_cast<std::size_t>(j) * 3 * width + width + hd * d;
                            const T s  = dl * inv_sqrt_d;
                            for (int e = 0; e < d; ++e) {
                                gqi[e] += s * k[e];
                                gkj[e] += s * q[e];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <class T>
Var<T> kl_normal(const Var<T>& mu, const Var<T>& logvar) {
    check_same(mu.shape(), logvar.shape(), "kl_normal");
    require(mu.size() > 0, "autograd", "kl_normal of empty tensors");
    long double s = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const long double m = mu.value()[i], lv = logvar.value()[i];
        s += 0.5L * (m * m + std::exp(lv) - 1.0L - lv);
    }
    const T n = static_cast<T>(mu.size());
    return make_op<T>(Tensor<T>({}, {static_cast<T>(s / n)}), {&mu, &logvar}, [n](Node<T>& self) {
        const T k = self.grad[0] / n;
        if (auto* g = parent_grad(self, 0)) {
            const auto& m = parent_value(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * m[i];
        }
        if (auto* g = parent_grad(self, 1)) {
            const auto& lv = parent_value(self, 1);
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * T(0.5) * (std::exp(lv[i]) - T(1));
        }
    });
}

template <class T>
Var<T> channel_unit_normalize(const Var<T>& x, T eps) {
    check_rank(x.shape(), 4, "channel_unit_normalize");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto norms           = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * hw);
    Tensor<T> out(x.shape());
    for (int b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
            double s = 0;
            for (int ch = 0; ch < c; ++ch) {
                const double v = x.value()[(static_cast<std::size_t>(b) * c + ch) * hw + p];
                s += v * v;
            }
            const T nr                     = static_cast<T>(std::sqrt(s));
            (*norms)[b * hw + p]           = nr;
            for (int ch = 0; ch < c; ++ch) {
                const auto i = (static_cast<std::size_t>(b) * c + ch) * hw + p;
                out[i]       = x.value()[i] / (nr + eps);
            }
        }
    return make_op<T>(std::move(out), {&x}, [n, c, hw, norms, eps](Node<T>& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const auto& xv = parent_value(self, 0);
        for (int b = 0; b < n; ++b)
            for (std::size_t p = 0; p < hw; ++p) {
                const T nr = (*norms)[b * hw + p];
                const T s  = nr + eps;
                T dot      = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const auto i = (static_cast<std::size_t>(b) * c + ch) * hw + p;
                    dot += self.grad[i] * xv[i];
                }
                const T k = nr > T(0) ? dot / (s * s * nr) : T(0);
                for (int ch = 0; ch < c; ++ch) {
                    const auto i = (static_cast<std::size_t>(b) * c + ch) * hw + p;
                    (*g)[i] += self.grad[i] / s - k * xv[i];
                }
            }
    });
}

template <class T>
Var<T> cosine_rows(const Var<T>& a, const Var<T>& b, T eps) {
    check_same(a.shape(), b.shape(), "cosine_rows");
    check_rank(a.shape(), 2, "cosine_rows");
    const int rows = a.dim(0), dim = a.dim(1);
    Tensor<T> out({rows});
    auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows) * 3);  // |a|, |b|, a.b
    for (int r = 0; r < rows; ++r) {
        const T* ar = a.value().data() + static_cast<std::size_t>(r) * dim;
        const T* br = b.value().data() + static_cast<std::size_t>(r) * dim;
        double aa = 0, bb = 0, ab = 0;
        for (int j = 0; j < dim; ++j) {
            aa += static_cast<double>(ar[j]) * ar[j];
            bb += static_cast<double>(br[j]) * br[j];
            ab += static_cast<double>(ar[j]) * br[j];
        }
        const double na = std::max(std::sqrt(aa), static_cast<double>(eps));
        const double nb = std::max(std::sqrt(bb), static_cast<double>(eps));
        (*stats)[r * 3]     = static_cast<T>(na);
        (*stats)[r * 3 + 1] = static_cast<T>(nb);
        (*stats)[r * 3 + 2] = static_cast<T>(ab);
        out[r]              = static_cast<T>(ab / (na * nb));
    }
    return make_op<T>(std::move(out), {&a, &b}, [rows, dim, stats, eps](Node<T>& self) {
        const auto& av = parent_value(self, 0);
        const auto& bv = parent_value(self, 1);
        auto* ga       = parent_grad(self, 0);
        auto* gb       = parent_grad(self, 1);
        for (int r = 0; r < rows; ++r) {
            const T na = (*stats)[r * 3], nb = (*stats)[r * 3 + 1];
            const T cs = self.value[r];
            const T d  = self.grad[r];
            const T* ar = av.data() + static_cast<std::size_t>(r) * dim;
            const T* br = bv.data() + static_cast<std::size_t>(r) * dim;
            const bool a_clamped = na <= eps;
            const bool b_clamped = nb <= eps;
            for (int j = 0; j < dim; ++j) {
                if (ga) (*ga)[static_cast<std::size_t>(r) * dim + j] += d * (br[j] / (na * nb) - (a_clamped ? T(0) : cs * ar[j] / (na * na)));
                if (gb) (*gb)[static_cast<std::size_t>(r) * dim + j] += d * (ar[j] / (na * nb) - (b_clamped ? T(0) : cs * br[j] / (nb * nb)));
            }
        }
    });
}

#define SSDD_INSTANTIATE_AUTOGRAD(T)                                                                               \
    template class Var<T>;                                                                                         \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                             \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                             \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                             \
    template Var<T> scale(const Var<T>&, T);                                                                       \
    template Var<T> exp(const Var<T>&);                                                                            \
    template Var<T> silu(const Var<T>&);                                                                           \
    template Var<T> clamp(const Var<T>&, T, T);                                                                    \
    template Var<T> sum(const Var<T>&);                                                                            \
    template Var<T> mean(const Var<T>&);                                                                           \
    template Var<T> mse(const Var<T>&, const Var<T>&);                                                             \
    template Var<T> scale_per_sample(const Var<T>&, std::span<const T>);                                           \
    template Var<T> reshape(const Var<T>&, Shape);                                                                 \
    template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> slice_channels(const Var<T>&, int, int);                                                       \
    template Var<T> upsample_nearest(const Var<T>&, int);                                                          \
    template Var<T> avg_pool(const Var<T>&, int);                                                                  \
    template Var<T> mean_spatial(const Var<T>&);                                                                   \
    template Var<T> nchw_to_tokens(const Var<T>&);                                                                 \
    template Var<T> tokens_to_nchw(const Var<T>&, int, int);                                                       \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                           \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                                 \
    template Var<T> group_norm(const Var<T>&, int, T);                                                             \
    template Var<T> layer_norm(const Var<T>&, T);                                                                  \
    template Var<T> affine(const Var<T>&, const Var<T>&, const Var<T>&, bool);                                     \
    template Var<T> modulate(const Var<T>&, const Var<T>&, bool);                                                  \
    template Var<T> geglu(const Var<T>&);                                                                          \
    template Var<T> window_attention(const Var<T>&, const Var<T>&, int, int, int, int);                            \
    template Tensor<T> window_attention_weights(const Tensor<T>&, const Tensor<T>&, int, int, int, int);           \
    template Var<T> kl_normal(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> channel_unit_normalize(const Var<T>&, T);                                                      \
    template Var<T> cosine_rows(const Var<T>&, const Var<T>&, T);

SSDD_INSTANTIATE_AUTOGRAD(float)
SSDD_INSTANTIATE_AUTOGRAD(double)

}  // namespace ssdd::ag
