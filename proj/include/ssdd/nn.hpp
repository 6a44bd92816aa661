#pragma once

#include "ssdd/autograd.hpp"
#include "ssdd/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace ssdd::nn {

using ag::Var;

// Named parameter registry. Names are slash-separated paths such as
// "decoder/down0/block1/conv1/weight"; iteration order is lexicographic so
// hashes and checkpoints are layout-stable.
template <class T>
class ParamStore {
public:
    Var<T> create(const std::string& name, Tensor<T> init);
    const Var<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::vector<std::string> names() const;
    const std::map<std::string, Var<T>>& entries() const { return params_; }
    std::size_t count() const;
    // Parameters whose name starts with prefix.
    std::size_t count(const std::string& prefix) const;

    void zero_grad();
    void set_trainable(bool trainable);
    bool trainable() const { return trainable_; }

    // FNV-1a over (name, shape, raw bytes) of every parameter.
    std::string hash() const;

    // Copies values by name; both stores must hold identical layouts.
    void copy_values_from(const ParamStore& other);
    void load(const std::string& name, const Tensor<T>& value);

private:
    std::map<std::string, Var<T>> params_;
    bool trainable_ = true;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <class T>
Tensor<T> fan_in_uniform(const Shape& shape, int fan_in, Rng& rng);

template <class T>
struct Linear {
    Var<T> weight;
    Var<T> bias;

    static Linear make(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool zero_init = false);
    Var<T> operator()(const Var<T>& x) const { return ag::linear(x, weight, bias); }
};

template <class T>
struct Conv2d {
    Var<T> weight;
    Var<T> bias;
    int stride = 1;
    int pad    = 1;

    static Conv2d make(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
                       bool zero_init = false);
    Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

// GroupNorm with learned per-channel affine parameters.
template <class T>
struct GroupNorm {
    int groups = 1;
    Var<T> gamma;
    Var<T> beta;

    static GroupNorm make(ParamStore<T>& store, const std::string& name, int channels);
    Var<T> operator()(const Var<T>& x) const { return ag::affine(ag::group_norm(x, groups), gamma, beta, false); }
};

// Largest divisor of `channels` not exceeding 32.
int group_count(int channels);

// Decoupled-weight-decay Adam with a constant learning rate.
template <class T>
class AdamW {
public:
    struct Options {
        double lr           = 3e-4;
        double beta1        = 0.9;
        double beta2        = 0.999;
        double eps          = 1e-8;
        double weight_decay = 1e-3;
    };

    AdamW() = default;
    explicit AdamW(Options options) : options_(options) {}

    // Applies one update to every parameter of `store` that has a gradient.
    // `lr_scale` multiplies the learning rate for this group.
    void step(ParamStore<T>& store, double lr_scale = 1.0);
    void set_lr(double lr) { options_.lr = lr; }
    const Options& options() const { return options_; }

    // Moment buffers keyed by parameter name; persisted in checkpoints.
    std::map<std::string, Tensor<T>>& first_moments() { return m_; }
    std::map<std::string, Tensor<T>>& second_moments() { return v_; }
    std::map<std::string, long>& step_counts() { return t_; }
    const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
    const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }
    const std::map<std::string, long>& step_counts() const { return t_; }

private:
    Options options_;
    std::map<std::string, Tensor<T>> m_;
    std::map<std::string, Tensor<T>> v_;
    std::map<std::string, long> t_;
};

// Rescales all gradients in the stores so their joint L2 norm is at most
// max_norm. Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::vector<ParamStore<T>*> stores, double max_norm);

}  // namespace ssdd::nn
