#include "ssdd/nn.hpp"

#include "ssdd/hash.hpp"
#include "ssdd/simd.hpp"

#include <cmath>

namespace ssdd::nn {

template <class T>
Var<T> ParamStore<T>::create(const std::string& name, Tensor<T> init) {
    require(!params_.count(name), "nn", "duplicate parameter " + name);
    Var<T> v(std::move(init), trainable_);
    params_.emplace(name, v);
    return v;
}

template <class T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "nn", "unknown parameter " + name);
    return it->second;
}

template <class T>
std::vector<std::string> ParamStore<T>::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
}

template <class T>
std::size_t ParamStore<T>::count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.size();
    return n;
}

template <class T>
std::size_t ParamStore<T>::count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) {
        if (name.compare(0, prefix.size(), prefix) == 0) n += v.size();
    }
    return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
    for (auto& [_, v] : params_) {
        auto copy = v;
        copy.zero_grad();
    }
}

template <class T>
void ParamStore<T>::set_trainable(bool trainable) {
    trainable_ = trainable;
    for (auto& [_, v] : params_) {
        auto copy = v;
        copy.set_requires_grad(trainable);
    }
}

template <class T>
std::string ParamStore<T>::hash() const {
    Fnv1a h;
    for (const auto& [name, v] : params_) {
        h.update(name);
        for (int d : v.shape()) h.update(&d, sizeof d);
        h.update(v.value().span());
    }
    return h.hex();
}

template <class T>
void ParamStore<T>::copy_values_from(const ParamStore& other) {
    require(params_.size() == other.params_.size(), "nn", "parameter layouts differ in size");
    for (auto& [name, v] : params_) {
        load(name, other.get(name).value());
    }
}

template <class T>
void ParamStore<T>::load(const std::string& name, const Tensor<T>& value) {
    auto it = params_.find(name);
    require(it != params_.end(), "nn", "unknown parameter " + name);
    require(it->second.shape() == value.shape(), "nn",
            "shape mismatch for " + name + ": " + shape_str(it->second.shape()) + " vs " + shape_str(value.shape()));
    auto copy             = it->second;
    copy.mutable_value() = value;
}

template <class T>
Tensor<T> fan_in_uniform(const Shape& shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    return rand_uniform<T>(shape, rng, -bound, bound);
}

template <class T>
Linear<T> Linear<T>::make(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool zero_init) {
    Linear l;
    l.weight = store.create(name + "/weight", zero_init ? Tensor<T>({out, in}) : fan_in_uniform<T>({out, in}, in, rng));
    l.bias   = store.create(name + "/bias", Tensor<T>({out}));
    return l;
}

template <class T>
Conv2d<T> Conv2d<T>::make(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride,
                          Rng& rng, bool zero_init) {
    Conv2d c;
    const int fan_in = in * kernel * kernel;
    c.weight = store.create(name + "/weight", zero_init ? Tensor<T>({out, in, kernel, kernel})
                                                         : fan_in_uniform<T>({out, in, kernel, kernel}, fan_in, rng));
    c.bias   = store.create(name + "/bias", Tensor<T>({out}));
    c.stride = stride;
    c.pad    = kernel / 2;
    return c;
}

template <class T>
GroupNorm<T> GroupNorm<T>::make(ParamStore<T>& store, const std::string& name, int channels) {
    GroupNorm g;
    g.groups = group_count(channels);
    g.gamma  = store.create(name + "/gamma", Tensor<T>({channels}, T(1)));
    g.beta   = store.create(name + "/beta", Tensor<T>({channels}));
    return g;
}

int group_count(int channels) {
    for (int g = std::min(32, channels); g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

template <class T>
void AdamW<T>::step(ParamStore<T>& store, double lr_scale) {
    if (!store.trainable()) return;
    const double lr = options_.lr * lr_scale;
    for (const auto& [name, var] : store.entries()) {
        if (!var.has_grad()) continue;
        auto p       = var;
        auto& value  = p.mutable_value();
        const auto& g = p.grad_buffer();
        auto& m      = m_[name];
        auto& v      = v_[name];
        if (m.size() != value.size()) {
            m = Tensor<T>(value.shape());
            v = Tensor<T>(value.shape());
        }
        const long t     = ++t_[name];
        const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t));
        const double decay = 1.0 - lr * options_.weight_decay;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double gi = g[i];
            const double mi = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
            const double vi = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
            m[i]            = static_cast<T>(mi);
            v[i]            = static_cast<T>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + options_.eps);
            value[i]            = static_cast<T>(value[i] * decay - lr * update);
        }
    }
}

template <class T>
double clip_grad_norm(std::vector<ParamStore<T>*> stores, double max_norm) {
    double sq = 0;
    for (auto* s : stores) {
        for (const auto& [_, v] : s->entries()) {
            if (!v.has_grad()) continue;
            auto copy = v;
            const auto& g = copy.grad_buffer();
            sq += static_cast<double>(simd::dot(g.size(), g.data(), g.data()));
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto* s : stores) {
            for (const auto& [_, v] : s->entries()) {
                if (!v.has_grad()) continue;
                auto copy = v;
                for (auto& x : copy.grad_buffer()) x *= factor;
            }
        }
    }
    return norm;
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> fan_in_uniform<float>(const Shape&, int, Rng&);
template Tensor<double> fan_in_uniform<double>(const Shape&, int, Rng&);
template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct GroupNorm<float>;
template struct GroupNorm<double>;
template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(std::vector<ParamStore<float>*>, double);
template double clip_grad_norm<double>(std::vector<ParamStore<double>*>, double);

}  // namespace ssdd::nn
