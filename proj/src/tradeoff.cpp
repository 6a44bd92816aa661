#include "ssdd/tradeoff.hpp"

#include "ssdd/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "tradeoff";

std::vector<double> histogram(const std::vector<double>& v, int bins) {
    std::vector<double> counts(bins, 0.0);
    for (double x : v) {
        const int b = std::clamp(static_cast<int>(std::floor((x + 2.0) / 4.0 * bins)), 0, bins - 1);
        counts[b] += 1.0;
    }
    return counts;
}

}  // namespace

nlohmann::json ToyReport::to_json() const {
    return {{"mse_deterministic", mse_deterministic},
            {"mse_generative", mse_generative},
            {"kl_generative", kl_generative},
            {"kl_deterministic", kl_deterministic_degenerate ? "degenerate/unbounded" : "finite"},
            {"kl_deterministic_smoothed", kl_deterministic_smoothed},
            {"deterministic_support", deterministic_support},
            {"ks_generative", ks_generative},
            {"n_samples", n_samples},
            {"seed", seed}};
}

double histogram_kl(const std::vector<double>& data, const std::vector<double>& model, int bins) {
    require(!data.empty() && !model.empty() && bins > 0, kModule, "histogram KL needs samples and bins");
    const auto p = histogram(data, bins);
    const auto q = histogram(model, bins);
    const double np = static_cast<double>(data.size());
    const double nq = static_cast<double>(model.size()) + bins;
    double kl       = 0;
    for (int i = 0; i < bins; ++i) {
        if (p[i] == 0) continue;
        const double pi = p[i] / np;
        const double qi = (q[i] + 1.0) / nq;
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

ToyReport run_toy_experiment(long n, std::uint64_t seed) {
    require(n >= 10000, kModule, "toy experiment needs at least 10^4 samples, got " + std::to_string(n));
    Rng rng(seed);
    std::vector<double> x(n), det(n), gen(n);
    long double se_det = 0, se_gen = 0;
    for (long i = 0; i < n; ++i) {
        x[i]           = rng.uniform(-2.0, 2.0);
        const double z = x[i] >= 0 ? 1.0 : -1.0;
        det[i]         = z;
        gen[i]         = rng.uniform(z - 1.0, z + 1.0);
        se_det += (x[i] - det[i]) * (x[i] - det[i]);
        se_gen += (x[i] - gen[i]) * (x[i] - gen[i]);
    }
    ToyReport r;
    r.n_samples         = n;
    r.seed              = seed;
    r.mse_deterministic = static_cast<double>(se_det / n);
    r.mse_generative    = static_cast<double>(se_gen / n);
    r.kl_generative     = histogram_kl(x, gen);
    r.kl_deterministic_smoothed = histogram_kl(x, det);
    const std::set<double> support(det.begin(), det.end());
    r.deterministic_support.assign(support.begin(), support.end());
    r.kl_deterministic_degenerate = support.size() < static_cast<std::size_t>(kToyHistogramBins);

    std::sort(gen.begin(), gen.end());
    double ks = 0;
    for (long i = 0; i < n; ++i) {
        const double f = (gen[i] + 2.0) / 4.0;
        ks             = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
    }
    r.ks_generative = ks;
    return r;
}

bool verify_tradeoff(const ToyReport& report) {
    return report.mse_deterministic < report.mse_generative && report.kl_generative < report.kl_deterministic_smoothed;
}

std::string tradeoff_table(const ToyReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "decoder        mse       kl\n"
                  "deterministic  %.6f  unbounded (smoothed estimate %.4f)\n"
                  "generative     %.6f  %.6f\n",
                  r.mse_deterministic, r.kl_deterministic_smoothed, r.mse_generative, r.kl_generative);
    return buf;
}

}  // namespace ssdd
