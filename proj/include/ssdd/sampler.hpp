#pragma once

// Euler integration of the learned velocity field over the shifted
// t-spacing t_i = ((N - i + 1) / N)^rho, i = 1..N, followed by a final step
// from t_N to 0.

#include "ssdd/decoder.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace ssdd {

struct SampleSchedule {
    std::vector<double> timesteps;  // t_1 = 1 > t_2 > ... > t_N > 0
    int n_steps = 0;
    double rho  = 1.0;

    // Consecutive (t, t_next) pairs including the terminal (t_N, 0).
    std::vector<std::pair<double, double>> steps() const;
};

SampleSchedule make_schedule(int n_steps, double rho);

template <class T>
Tensor<T> euler_step(const Tensor<T>& x_t, double t, double t_next, const Tensor<T>& nu_hat);

// (x_t, t, z) -> predicted velocity.
template <class T>
using VelocityField = std::function<Tensor<T>(const Tensor<T>& x_t, double t, const Tensor<T>& z)>;

template <class T>
VelocityField<T> decoder_field(const Decoder<T>& decoder);

// Called with every consumed (t, t_next) pair; used by tests to audit time
// monotonicity.
using StepObserver = std::function<void(double t, double t_next)>;

template <class T>
Tensor<T> sample(const VelocityField<T>& field, const Tensor<T>& epsilon, const Tensor<T>& z,
                 const SampleSchedule& schedule, const StepObserver& observer = {});
template <class T>
Tensor<T> sample(const Decoder<T>& decoder, const Tensor<T>& epsilon, const Tensor<T>& z,
                 const SampleSchedule& schedule);

// eps + D(eps | 1, z)
template <class T>
Tensor<T> single_step(const VelocityField<T>& field, const Tensor<T>& epsilon, const Tensor<T>& z);
template <class T>
Tensor<T> single_step(const Decoder<T>& decoder, const Tensor<T>& epsilon, const Tensor<T>& z);

}  // namespace ssdd
