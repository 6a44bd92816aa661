#pragma once

// Distortion metrics (PSNR, SSIM, perceptual) and distribution-shift
// metrics (Frechet distance between Gaussian feature summaries, k-NN
// density/coverage), plus per-pixel diversity maps.
//
// Images are in [-1, 1], so the default peak is 2.

#include "ssdd/features.hpp"
#include "ssdd/sampler.hpp"

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssdd {

inline constexpr double kPsnrCap    = 100.0;
inline constexpr int kSsimWindow    = 7;

template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& x_hat, double peak = 2.0);

// Mean over all 7x7 windows (fully inside the image) and channels of the
// local SSIM, uniform window, population moments, C1 = (0.01 peak)^2,
// C2 = (0.03 peak)^2. Accepts [C, H, W] or [B, C, H, W].
template <class T>
double ssim(const Tensor<T>& x, const Tensor<T>& x_hat, double peak = 2.0);

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> covariance;  // row-major dim x dim, population (1/n)
    int count = 0;
    std::string extractor;

    int dim() const { return static_cast<int>(mean.size()); }
};

// rows [n, d]; two-pass mean then covariance.
FeatureStats feature_stats(const std::vector<std::vector<double>>& rows, const std::string& extractor = {});
template <class T>
FeatureStats feature_stats(const std::vector<Tensor<T>>& images, const FeatureExtractor<T>& extractor);

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

struct DensityCoverage {
    double density  = 0;
    double coverage = 0;
    int k           = 0;
};

// Radius of each real point = distance to its k-th nearest other real point;
// membership uses strict <.
DensityCoverage density_coverage(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& fake,
                                 int k = 5);

// image_draw(eps) -> reconstruction with the latent held fixed.
template <class T>
using DrawFn = std::function<Tensor<T>(const Tensor<T>& epsilon)>;

// Per-pixel standard deviation (n - 1 normalization) across n_draws
// reconstructions from independent eps ~ N(0, I) of the given shape.
template <class T>
Tensor<T> diversity_map(const DrawFn<T>& draw, const Shape& epsilon_shape, int n_draws, std::uint64_t seed);
template <class T>
Tensor<T> diversity_map(const Decoder<T>& decoder, const Tensor<T>& z, const SampleSchedule& schedule, int n_draws,
                        std::uint64_t seed);

struct MetricReport {
    double psnr       = 0;
    double ssim       = 0;
    double perceptual = 0;
    double frechet    = 0;
    double density    = 0;
    double coverage   = 0;
    int knn_k         = 0;
    int n_images      = 0;
    std::string extractor;
    std::string config_hash;

    nlohmann::json to_json() const;
};

// Reference and reconstruction lists of [3, H, W] images, index-aligned.
template <class T>
MetricReport evaluate_sets(const std::vector<Tensor<T>>& reference, const std::vector<Tensor<T>>& reconstruction,
                           const FeatureExtractor<T>& extractor, const std::string& config_hash = "none");

struct SweepRow {
    int n_steps = 0;
    double rho  = 0;
    MetricReport report;
};

// reconstruct(schedule) -> reconstructions of the eval set, index-aligned
// with `reference`. The caller fixes eps per image across the sweep.
template <class T>
std::vector<SweepRow> step_sweep(const std::function<std::vector<Tensor<T>>(const SampleSchedule&)>& reconstruct,
                                 const std::vector<Tensor<T>>& reference, const std::vector<int>& n_list,
                                 const std::vector<double>& rho_list, const FeatureExtractor<T>& extractor);

// Columns: N, rho, psnr, ssim, perceptual, frechet.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace ssdd
