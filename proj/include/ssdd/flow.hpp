#pragma once

// Flow-matching primitives on the linear path x_t = (1 - t) x + t eps.
// The decoder predicts the velocity nu = x - eps; integrating from t to
// t' < t moves x_t by (t - t') nu.

#include "ssdd/autograd.hpp"
#include "ssdd/rng.hpp"

#include <span>
#include <vector>

namespace ssdd {

template <class T>
struct NoisyState {
    Tensor<T> x_t;
    std::vector<T> t;  // one per batch item
    Tensor<T> epsilon;
};

// Scalar t applied to every element.
template <class T>
Tensor<T> interpolate(const Tensor<T>& x, const Tensor<T>& epsilon, T t);
// Per-sample t along the leading axis.
template <class T>
Tensor<T> interpolate(const Tensor<T>& x, const Tensor<T>& epsilon, std::span<const T> t);

template <class T>
NoisyState<T> make_noisy_state(const Tensor<T>& x, Tensor<T> epsilon, std::vector<T> t);

template <class T>
Tensor<T> velocity_target(const Tensor<T>& x, const Tensor<T>& epsilon);

// t = sigmoid(m + s n), n ~ N(0, 1).
double sample_timestep(Rng& rng, double m = 0.0, double s = 1.0);
double logit_normal(double n, double m = 0.0, double s = 1.0);

// mean((nu_hat - (x - eps))^2)
template <class T>
ag::Var<T> fm_loss(const ag::Var<T>& nu_hat, const Tensor<T>& x, const Tensor<T>& epsilon);
template <class T>
double fm_loss(const Tensor<T>& nu_hat, const Tensor<T>& x, const Tensor<T>& epsilon);

// x0_hat = x_t + t nu_hat
template <class T>
Tensor<T> one_step_prediction(const Tensor<T>& x_t, T t, const Tensor<T>& nu_hat);
template <class T>
ag::Var<T> one_step_prediction(const Tensor<T>& x_t, std::span<const T> t, const ag::Var<T>& nu_hat);

// nu - (lambda t / 2) grad_L: the target whose plain regression gradient
// equals that of FM plus lambda times a perceptual loss on x0_hat.
template <class T>
Tensor<T> shifted_target(const Tensor<T>& nu, T t, T lambda, const Tensor<T>& grad_L);

}  // namespace ssdd
