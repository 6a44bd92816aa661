#pragma once

// One-dimensional distortion versus distribution-shift example.
//
// x ~ U(-2, 2) is encoded to one bit z = sign(x). The deterministic decoder
// returns z itself and attains the minimum MSE (1/3), but its outputs live on
// {-1, 1}, so KL(P_x || P_xhat) is undefined (infinite). The generative
// decoder draws xhat ~ U(z - 1, z + 1): its output distribution is exactly
// U(-2, 2) (KL = 0) at twice the MSE (2/3). A lower-distortion decoder must
// therefore shift the output distribution, and only a non-deterministic
// decoder can match P_x exactly.

#include "ssdd/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssdd {

inline constexpr int kToyHistogramBins = 100;

struct ToyReport {
    double mse_deterministic = 0;
    double mse_generative    = 0;
    double kl_generative     = 0;  // histogram estimate
    // The deterministic decoder's KL is unbounded; this flag records that and
    // kl_deterministic_smoothed is the finite add-one-smoothed histogram value
    // used as the comparison bound.
    bool kl_deterministic_degenerate = true;
    double kl_deterministic_smoothed = 0;
    std::vector<double> deterministic_support;  // distinct outputs of D^s
    double ks_generative = 0;                   // sup |F_n - F_U(-2,2)|
    long n_samples       = 0;
    std::uint64_t seed   = 0;

    nlohmann::json to_json() const;
};

// KL(p || q) between histograms of `data` and `model` on [-2, 2] with
// add-one smoothing applied to the model histogram only.
double histogram_kl(const std::vector<double>& data, const std::vector<double>& model, int bins = kToyHistogramBins);

ToyReport run_toy_experiment(long n, std::uint64_t seed);

// mse_deterministic < mse_generative and kl_generative < the deterministic
// bound.
bool verify_tradeoff(const ToyReport& report);

// Two-row text summary (decoder, mse, kl).
std::string tradeoff_table(const ToyReport& report);

}  // namespace ssdd
