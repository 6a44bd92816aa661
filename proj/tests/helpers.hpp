#pragma once

// Shared fixtures for the unit and acceptance tests.

#include "ssdd/autograd.hpp"
#include "ssdd/config.hpp"
#include "ssdd/features.hpp"
#include "ssdd/flow.hpp"
#include "ssdd/rng.hpp"
#include "ssdd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace ssdd::testing {

// Narrow decoder/encoder widths so double-precision checks stay fast.
inline ModelSizeSpec tiny_model() {
    ModelSizeSpec m;
    m.size                   = ModelSize::S;
    m.base_channels          = 8;
    m.depth_multipliers      = {1, 1, 2, 2};
    m.num_transformer_blocks = 8;
    return m;
}

template <class T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    auto t = randn<T>(shape, rng);
    for (auto& v : t) v = static_cast<T>(v * scale);
    return t;
}

// Central differences of loss() with respect to the entries of `param`,
// compared to its automatic gradient. Checks `probes` evenly spread entries
// and returns the worst relative error max|a-n| / max(|a|,|n|,floor).
inline double gradient_check(ag::Var<double>& param, const std::function<ag::Var<double>()>& loss, int probes = 6,
                             double h = 1e-6, double floor = 1e-8) {
    param.zero_grad();
    auto l = loss();
    l.backward();
    const Tensor<double> analytic = param.grad();
    double worst                  = 0;
    const std::size_t n           = param.size();
    const int count               = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(probes)));
    for (int k = 0; k < count; ++k) {
        const std::size_t i = count == 1 ? 0 : (n - 1) * k / (count - 1);
        double& v           = param.mutable_value()[i];
        const double keep   = v;
        double lp, lm;
        {
            ag::NoGradGuard guard;
            v  = keep + h;
            lp = loss().item();
            v  = keep - h;
            lm = loss().item();
        }
        v                   = keep;
        const double num    = (lp - lm) / (2 * h);
        const double a      = analytic[i];
        const double denom  = std::max({std::abs(a), std::abs(num), floor});
        worst               = std::max(worst, std::abs(a - num) / denom);
    }
    return worst;
}

// KL(N(mu, exp(logvar)) || N(0, 1)) by composite Simpson integration of
// p log(p / q) over mu +- 14 sigma.
inline double kl_quadrature(double mu, double logvar, int intervals = 20000) {
    const double sigma = std::exp(0.5 * logvar);
    const double lo = mu - 14 * sigma, hi = mu + 14 * sigma;
    const double h  = (hi - lo) / intervals;
    auto integrand  = [&](double x) {
        const double u    = (x - mu) / sigma;
        const double logp = -0.5 * u * u - std::log(sigma) - 0.5 * std::log(2 * M_PI);
        const double logq = -0.5 * x * x - 0.5 * std::log(2 * M_PI);
        return std::exp(logp) * (logp - logq);
    };
    double s = integrand(lo) + integrand(hi);
    for (int i = 1; i < intervals; ++i) s += integrand(lo + i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
}

// Gradient of sum((nu_hat - nu)^2) + lambda * L(x0_hat, x) with respect to
// nu_hat, against the plain regression gradient towards shifted_target with
// grad_L frozen at the current prediction. Returns max|g1 - g2| / max|g1|.
inline double shifted_target_identity_error(double lambda, double t, const Shape& shape,
                                            const std::function<ag::Var<double>(const ag::Var<double>&,
                                                                                const ag::Var<double>&)>& perceptual,
                                            std::uint64_t seed) {
    const auto x      = random_tensor<double>(shape, seed, 0.5);
    const auto eps    = random_tensor<double>(shape, seed + 1);
    const auto guess  = random_tensor<double>(shape, seed + 2);
    const auto nu     = velocity_target(x, eps);
    const auto x_t    = interpolate(x, eps, t);
    const double ts[] = {t};
    const auto x_ref  = ag::constant(x);

    ag::Var<double> nu_hat(guess, true);
    const auto x0 = one_step_prediction<double>(x_t, ts, nu_hat);
    auto diff     = ag::sub(nu_hat, ag::constant(nu));
    ag::add(ag::sum(ag::mul(diff, diff)), ag::scale(perceptual(x0, x_ref), lambda)).backward();
    const auto direct = nu_hat.grad();

    ag::Var<double> x0_leaf(x0.value(), true);
    perceptual(x0_leaf, x_ref).backward();
    const auto target = shifted_target(nu, t, lambda, x0_leaf.grad());

    ag::Var<double> nu_hat2(guess, true);
    auto diff2 = ag::sub(nu_hat2, ag::constant(target));
    ag::sum(ag::mul(diff2, diff2)).backward();
    const auto shifted = nu_hat2.grad();

    double scale = 0;
    for (double v : direct) scale = std::max(scale, std::abs(v));
    return max_abs_diff(direct, shifted) / std::max(scale, 1e-300);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ssdd_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace ssdd::testing
