#include "ssdd/error.hpp"
#include "ssdd/metrics.hpp"

#include "../helpers.hpp"
#include "../oracles.hpp"

#include <doctest.h>

using namespace ssdd;
using ssdd::testing::random_tensor;

namespace {

FeatureStats diagonal_stats(const std::vector<double>& mu, const std::vector<double>& sigma) {
    FeatureStats s;
    s.mean = mu;
    s.covariance.assign(mu.size() * mu.size(), 0.0);
    for (std::size_t i = 0; i < mu.size(); ++i) s.covariance[i * mu.size() + i] = sigma[i] * sigma[i];
    s.count = 100;
    return s;
}

std::vector<std::vector<double>> clusters(Rng& rng, int n, double shift) {
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < n; ++i) {
        const double cx = (i % 3) * 4.0 + shift;
        pts.push_back({cx + rng.normal(), (i % 2) * 3.0 + rng.normal()});
    }
    return pts;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("PSNR") {
    const auto x = random_tensor<double>({3, 8, 8}, 1, 0.3);
    CHECK(psnr(x, x) == kPsnrCap);
    Tensor<double> a({1, 4, 4}, 100.0), b({1, 4, 4}, 101.0);
    CHECK(psnr(a, b, 255.0) == doctest::Approx(20 * std::log10(255.0)));
    CHECK(psnr(a, b, 255.0) == doctest::Approx(48.1308).epsilon(1e-5));
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = random_tensor<double>({3, 9, 7}, 10 + trial, 0.3), q = random_tensor<double>({3, 9, 7}, 50 + trial, 0.3);
        CHECK(std::abs(psnr(p, q) - testing::oracle_psnr(p, q)) < 1e-9);
    }
}

TEST_CASE("SSIM") {
    const auto x = random_tensor<double>({3, 12, 12}, 1, 0.3);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    for (int trial = 0; trial < 5; ++trial) {
        const auto p = random_tensor<double>({3, 10, 13}, 10 + trial, 0.4);
        auto q       = p;
        Rng rng(trial);
        for (auto& v : q) v += 0.2 * rng.normal();
        CHECK(std::abs(ssim(p, q) - testing::oracle_ssim(p, q)) < 1e-9);
    }
    // Zero-mean gratings against their negation.
    Tensor<double> g({1, 14, 14}), neg({1, 14, 14});
    for (int y = 0; y < 14; ++y)
        for (int xx = 0; xx < 14; ++xx) {
            g[y * 14 + xx]   = 0.5 * std::sin(xx * 1.3) * std::cos(y * 0.7);
            neg[y * 14 + xx] = -g[y * 14 + xx];
        }
    CHECK(ssim(g, neg) < 0);
    Tensor<double> c({1, 8, 8}, 0.2);
    double prev = -1;
    for (double delta : {0.5, 0.1, 0.01, 0.001}) {
        Tensor<double> d({1, 8, 8}, 0.2 + delta);
        const double s = ssim(c, d);
        CHECK(s > prev);
        prev = s;
    }
    CHECK(prev > 0.999);
    CHECK_THROWS_AS(ssim(Tensor<double>({1, 5, 5}), Tensor<double>({1, 5, 5})), Error);
}

TEST_CASE("feature statistics") {
    const auto s = feature_stats({{1.0, 2.0}, {3.0, 6.0}});
    CHECK(s.mean == std::vector<double>{2.0, 4.0});
    CHECK(s.covariance == std::vector<double>{1.0, 2.0, 2.0, 4.0});
    CHECK(s.count == 2);
    const auto dup = feature_stats({{1.0, 2.0}, {3.0, 6.0}, {1.0, 2.0}, {3.0, 6.0}});
    CHECK(dup.mean == s.mean);
    CHECK(dup.covariance == s.covariance);
    const auto perm = feature_stats({{3.0, 6.0}, {1.0, 2.0}});
    CHECK(perm.mean == s.mean);
    CHECK(perm.covariance == s.covariance);
    CHECK_THROWS_AS(feature_stats({{1.0, 2.0}}), Error);
}

TEST_CASE("Frechet distance") {
    CHECK(frechet_distance(diagonal_stats({0}, {1}), diagonal_stats({1}, {1})) == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 1 + trial % 12;
        std::vector<double> mu(d), sigma(d), nu(d), tau(d);
        for (int i = 0; i < d; ++i) {
            mu[i]    = rng.normal();
            nu[i]    = rng.normal();
            sigma[i] = rng.uniform(0.1, 2);
            tau[i]   = rng.uniform(0.1, 2);
        }
        const auto a = diagonal_stats(mu, sigma), b = diagonal_stats(nu, tau);
        CHECK(std::abs(frechet_distance(a, b) - testing::oracle_diagonal_frechet(mu, sigma, nu, tau)) < 1e-8);
        CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9);
        CHECK(frechet_distance(a, a) == doctest::Approx(0).scale(1));
    }
    // Monotone under mean translation, with full covariances.
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 50; ++i) rows.push_back({rng.normal(), rng.normal() + 0.5 * i / 50.0, rng.normal()});
    const auto base = feature_stats(rows);
    double prev     = -1;
    for (double shift : {0.0, 0.5, 1.0, 2.0}) {
        auto moved = base;
        for (auto& m : moved.mean) m += shift;
        const double fd = frechet_distance(base, moved);
        CHECK(fd > prev);
        prev = fd;
    }
    CHECK_THROWS_AS(frechet_distance(diagonal_stats({0}, {1}), diagonal_stats({0, 0}, {1, 1})), Error);
}

TEST_CASE("density and coverage") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 10 + rng.uniform_int(0, 190);
        const int m = 10 + rng.uniform_int(0, 190);
        const auto real = clusters(rng, n, 0.0), fake = clusters(rng, m, rng.uniform(-2, 2));
        const auto got    = density_coverage(real, fake, 5);
        const auto oracle = testing::oracle_density_coverage(real, fake, 5);
        CHECK(got.density == oracle.density);
        CHECK(got.coverage == oracle.coverage);
    }
    const auto real = clusters(rng, 40, 0.0);
    CHECK(density_coverage(real, real, 5).coverage == 1.0);
    auto far = real;
    for (auto& p : far) p[0] += 1e4;
    const auto none = density_coverage(real, far, 5);
    CHECK(none.density == 0.0);
    CHECK(none.coverage == 0.0);
    CHECK_THROWS_AS(density_coverage(clusters(rng, 4, 0), real, 5), Error);
}

TEST_CASE("diversity maps") {
    const Shape shape = {1, 3, 8, 8};
    const auto fixed  = random_tensor<double>(shape, 1);
    const auto zero   = diversity_map<double>([&](const Tensor<double>&) { return fixed; }, shape, 16, 3);
    for (double v : zero) CHECK(v == 0.0);
    const auto pass = diversity_map<double>([](const Tensor<double>& e) { return e; }, shape, 64, 3);
    double mean = 0;
    for (double v : pass) mean += v;
    mean /= static_cast<double>(pass.size());
    // Sample std of 64 unit normals has standard error about 1/sqrt(126).
    CHECK(std::abs(mean - 1.0) < 3 / std::sqrt(126.0 * pass.size()) + 0.01);
    for (double v : pass) CHECK(std::abs(v - 1.0) < 5 / std::sqrt(126.0));
    const auto again = diversity_map<double>([](const Tensor<double>& e) { return e; }, shape, 64, 3);
    CHECK(max_abs_diff(pass, again) == 0);
    CHECK_THROWS_AS(diversity_map<double>([](const Tensor<double>& e) { return e; }, shape, 1, 3), Error);
}

TEST_CASE("evaluation reports") {
    ToyExtractor<double> ex(1234);
    std::vector<Tensor<double>> ref, rec;
    for (int i = 0; i < 8; ++i) {
        ref.push_back(random_tensor<double>({3, 16, 16}, i, 0.3));
        rec.push_back(random_tensor<double>({3, 16, 16}, 100 + i, 0.3));
    }
    const auto same = evaluate_sets(ref, ref, ex, "abc");
    CHECK(same.psnr == kPsnrCap);
    CHECK(same.ssim == doctest::Approx(1.0));
    CHECK(same.perceptual == 0.0);
    CHECK(same.frechet == doctest::Approx(0).scale(1));
    CHECK(same.n_images == 8);
    CHECK(same.config_hash == "abc");
    CHECK(same.extractor == ex.identity());
    const auto diff = evaluate_sets(ref, rec, ex);
    CHECK(diff.psnr < kPsnrCap);
    CHECK(diff.perceptual > 0);
    auto rref = ref, rrec = rec;
    std::reverse(rref.begin(), rref.end());
    std::reverse(rrec.begin(), rrec.end());
    const auto rev = evaluate_sets(rref, rrec, ex);
    CHECK(rev.psnr == doctest::Approx(diff.psnr).epsilon(1e-12));
    CHECK(rev.ssim == doctest::Approx(diff.ssim).epsilon(1e-12));
    CHECK(rev.perceptual == doctest::Approx(diff.perceptual).epsilon(1e-12));
    const auto j = diff.to_json();
    CHECK(j.contains("psnr"));
    CHECK(j.contains("extractor"));
}

TEST_CASE("step sweep") {
    ToyExtractor<double> ex(1234);
    std::vector<Tensor<double>> ref;
    for (int i = 0; i < 6; ++i) ref.push_back(random_tensor<double>({3, 16, 16}, i, 0.3));
    auto recon = [&](const SampleSchedule& s) {
        std::vector<Tensor<double>> out;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            auto r = ref[i];
            for (auto& v : r) v += 0.01 * s.n_steps * s.rho;
            out.push_back(r);
        }
        return out;
    };
    const auto rows = step_sweep<double>(recon, ref, {1, 2}, {1.0, 2.0}, ex);
    REQUIRE(rows.size() == 4);
    const auto direct = evaluate_sets(ref, recon(make_schedule(1, 1.0)), ex);
    CHECK(rows[0].n_steps == 1);
    CHECK(rows[0].report.psnr == direct.psnr);
    const auto csv = sweep_csv(rows);
    CHECK(csv.rfind("N,rho,psnr,ssim,perceptual,frechet", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK_THROWS_AS(step_sweep<double>(recon, {}, {1}, {1.0}, ex), Error);
}

}
