#include "ssdd/flow.hpp"

#include <cmath>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "flow";

void check_pair(const Shape& a, const Shape& b, const char* what) {
    require(a == b, kModule, std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

template <class T>
Tensor<T> interpolate(const Tensor<T>& x, const Tensor<T>& epsilon, T t) {
    check_pair(x.shape(), epsilon.shape(), "interpolate");
    require(t >= T(0) && t <= T(1), kModule, "interpolate: t must lie in [0, 1]");
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (T(1) - t) * x[i] + t * epsilon[i];
    return out;
}

template <class T>
Tensor<T> interpolate(const Tensor<T>& x, const Tensor<T>& epsilon, std::span<const T> t) {
    check_pair(x.shape(), epsilon.shape(), "interpolate");
    require(x.rank() >= 1 && static_cast<int>(t.size()) == x.dim(0), kModule, "interpolate: need one t per batch item");
    Tensor<T> out(x.shape());
    const std::size_t inner = x.size() / t.size();
    for (std::size_t b = 0; b < t.size(); ++b) {
        const T tb = t[b];
        require(tb >= T(0) && tb <= T(1), kModule, "interpolate: t must lie in [0, 1]");
        for (std::size_t i = b * inner; i < (b + 1) * inner; ++i) out[i] = (T(1) - tb) * x[i] + tb * epsilon[i];
    }
    return out;
}

template <class T>
NoisyState<T> make_noisy_state(const Tensor<T>& x, Tensor<T> epsilon, std::vector<T> t) {
    NoisyState<T> s;
    s.x_t     = interpolate<T>(x, epsilon, std::span<const T>(t));
    s.t       = std::move(t);
    s.epsilon = std::move(epsilon);
    return s;
}

template <class T>
Tensor<T> velocity_target(const Tensor<T>& x, const Tensor<T>& epsilon) {
    check_pair(x.shape(), epsilon.shape(), "velocity_target");
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - epsilon[i];
    return out;
}

double logit_normal(double n, double m, double s) {
    require(s > 0, kModule, "timestep scale must be positive");
    return 1.0 / (1.0 + std::exp(-(m + s * n)));
}

double sample_timestep(Rng& rng, double m, double s) {
    return logit_normal(rng.normal(), m, s);
}

template <class T>
ag::Var<T> fm_loss(const ag::Var<T>& nu_hat, const Tensor<T>& x, const Tensor<T>& epsilon) {
    check_pair(nu_hat.shape(), x.shape(), "fm_loss");
    return ag::mse(nu_hat, ag::constant(velocity_target(x, epsilon)));
}

template <class T>
double fm_loss(const Tensor<T>& nu_hat, const Tensor<T>& x, const Tensor<T>& epsilon) {
    check_pair(nu_hat.shape(), x.shape(), "fm_loss");
    check_pair(x.shape(), epsilon.shape(), "fm_loss");
    long double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T target      = x[i] - epsilon[i];
        const long double d = static_cast<long double>(nu_hat[i]) - target;
        s += d * d;
    }
    return static_cast<double>(s / static_cast<long double>(x.size()));
}

template <class T>
Tensor<T> one_step_prediction(const Tensor<T>& x_t, T t, const Tensor<T>& nu_hat) {
    check_pair(x_t.shape(), nu_hat.shape(), "one_step_prediction");
    Tensor<T> out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] + t * nu_hat[i];
    return out;
}

template <class T>
ag::Var<T> one_step_prediction(const Tensor<T>& x_t, std::span<const T> t, const ag::Var<T>& nu_hat) {
    check_pair(x_t.shape(), nu_hat.shape(), "one_step_prediction");
    return ag::add(ag::constant(x_t), ag::scale_per_sample(nu_hat, t));
}

template <class T>
Tensor<T> shifted_target(const Tensor<T>& nu, T t, T lambda, const Tensor<T>& grad_L) {
    check_pair(nu.shape(), grad_L.shape(), "shifted_target");
    const T k = lambda * t / T(2);
    Tensor<T> out(nu.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = nu[i] - k * grad_L[i];
    return out;
}

#define SSDD_INSTANTIATE_FLOW(T)                                                                            \
    template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, T);                                  \
    template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, std::span<const T>);                 \
    template NoisyState<T> make_noisy_state(const Tensor<T>&, Tensor<T>, std::vector<T>);                   \
    template Tensor<T> velocity_target(const Tensor<T>&, const Tensor<T>&);                                 \
    template ag::Var<T> fm_loss(const ag::Var<T>&, const Tensor<T>&, const Tensor<T>&);                     \
    template double fm_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> one_step_prediction(const Tensor<T>&, T, const Tensor<T>&);                          \
    template ag::Var<T> one_step_prediction(const Tensor<T>&, std::span<const T>, const ag::Var<T>&);       \
    template Tensor<T> shifted_target(const Tensor<T>&, T, T, const Tensor<T>&);

SSDD_INSTANTIATE_FLOW(float)
SSDD_INSTANTIATE_FLOW(double)

}  // namespace ssdd
