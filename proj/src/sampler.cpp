#include "ssdd/sampler.hpp"

#include "ssdd/flow.hpp"

#include <cmath>

namespace ssdd {

namespace {
constexpr std::string_view kModule = "sampler";
}

std::vector<std::pair<double, double>> SampleSchedule::steps() const {
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        out.emplace_back(timesteps[i], i + 1 < timesteps.size() ? timesteps[i + 1] : 0.0);
    }
    return out;
}

SampleSchedule make_schedule(int n_steps, double rho) {
    require(n_steps >= 1, kModule, "number of steps must be at least 1, got " + std::to_string(n_steps));
    require(rho >= 1.0, kModule, "rho must be at least 1");
    SampleSchedule s;
    s.n_steps = n_steps;
    s.rho     = rho;
    for (int i = 1; i <= n_steps; ++i) {
        s.timesteps.push_back(std::pow(static_cast<double>(n_steps - i + 1) / n_steps, rho));
    }
    return s;
}

template <class T>
Tensor<T> euler_step(const Tensor<T>& x_t, double t, double t_next, const Tensor<T>& nu_hat) {
    require(t_next >= 0.0 && t_next < t && t <= 1.0, kModule,
            "Euler step needs 0 <= t_next < t <= 1, got t=" + std::to_string(t) + " t_next=" + std::to_string(t_next));
    require(x_t.shape() == nu_hat.shape(), kModule, "velocity shape does not match the state");
    Tensor<T> out(x_t.shape());
    const T dt = static_cast<T>(t - t_next);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] + dt * nu_hat[i];
    return out;
}

template <class T>
VelocityField<T> decoder_field(const Decoder<T>& decoder) {
    return [&decoder](const Tensor<T>& x_t, double t, const Tensor<T>& z) {
        return decoder.velocity(x_t, static_cast<T>(t), z);
    };
}

template <class T>
Tensor<T> sample(const VelocityField<T>& field, const Tensor<T>& epsilon, const Tensor<T>& z,
                 const SampleSchedule& schedule, const StepObserver& observer) {
    require(!schedule.timesteps.empty(), kModule, "empty schedule");
    Tensor<T> x = epsilon;
    for (const auto& [t, t_next] : schedule.steps()) {
        if (observer) observer(t, t_next);
        x = euler_step(x, t, t_next, field(x, t, z));
    }
    return x;
}

template <class T>
Tensor<T> sample(const Decoder<T>& decoder, const Tensor<T>& epsilon, const Tensor<T>& z,
                 const SampleSchedule& schedule) {
    return sample(decoder_field(decoder), epsilon, z, schedule);
}

template <class T>
Tensor<T> single_step(const VelocityField<T>& field, const Tensor<T>& epsilon, const Tensor<T>& z) {
    return one_step_prediction(epsilon, T(1), field(epsilon, 1.0, z));
}

template <class T>
Tensor<T> single_step(const Decoder<T>& decoder, const Tensor<T>& epsilon, const Tensor<T>& z) {
    return single_step(decoder_field(decoder), epsilon, z);
}

#define SSDD_INSTANTIATE_SAMPLER(T)                                                                          \
    template Tensor<T> euler_step(const Tensor<T>&, double, double, const Tensor<T>&);                       \
    template VelocityField<T> decoder_field(const Decoder<T>&);                                              \
    template Tensor<T> sample(const VelocityField<T>&, const Tensor<T>&, const Tensor<T>&,                   \
                              const SampleSchedule&, const StepObserver&);                                   \
    template Tensor<T> sample(const Decoder<T>&, const Tensor<T>&, const Tensor<T>&, const SampleSchedule&); \
    template Tensor<T> single_step(const VelocityField<T>&, const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> single_step(const Decoder<T>&, const Tensor<T>&, const Tensor<T>&);

SSDD_INSTANTIATE_SAMPLER(float)
SSDD_INSTANTIATE_SAMPLER(double)

}  // namespace ssdd
