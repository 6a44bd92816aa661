#include "ssdd/autograd.hpp"
#include "ssdd/simd.hpp"

#include "../helpers.hpp"

#include <doctest.h>

#include <vector>

using namespace ssdd;
using simd::Isa;

namespace {

template <class T>
std::vector<T> naive_gemm(bool ta, bool tb, int m, int n, int k, T alpha, const std::vector<T>& a, int lda,
                          const std::vector<T>& b, int ldb, T beta, std::vector<T> c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            long double s = 0;
            for (int p = 0; p < k; ++p) {
                const T av = ta ? a[p * lda + i] : a[i * lda + p];
                const T bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                s += static_cast<long double>(av) * bv;
            }
            const long double prior = beta == T(0) ? 0.0L : static_cast<long double>(beta) * c[i * ldc + j];
            c[i * ldc + j]          = static_cast<T>(alpha * s + prior);
        }
    }
    return c;
}

std::vector<Isa> available() {
    std::vector<Isa> out;
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::avx512}) {
        if (simd::isa_supported(isa)) out.push_back(isa);
    }
    return out;
}

template <class T>
void check_gemm(double tol) {
    Rng rng(11);
    const int shapes[][3] = {{1, 1, 1}, {5, 7, 3}, {12, 32, 16}, {13, 33, 257}, {40, 70, 300}, {97, 5, 9}, {3, 2100, 4}};
    for (Isa isa : available()) {
        simd::ScopedIsa scoped(isa);
        for (const auto& s : shapes) {
            const int m = s[0], n = s[1], k = s[2];
            for (int variant = 0; variant < 4; ++variant) {
                const bool ta = variant & 1, tb = variant & 2;
                const int lda = ta ? m + 1 : k + 2, ldb = tb ? k + 3 : n + 1, ldc = n + 2;
                std::vector<T> a(static_cast<std::size_t>(ta ? k : m) * lda), b(static_cast<std::size_t>(tb ? n : k) * ldb),
                    c(static_cast<std::size_t>(m) * ldc);
                for (auto& v : a) v = static_cast<T>(rng.uniform(-1, 1));
                for (auto& v : b) v = static_cast<T>(rng.uniform(-1, 1));
                for (auto& v : c) v = static_cast<T>(rng.uniform(-1, 1));
                for (T beta : {T(0), T(1), T(0.5)}) {
                    const T alpha = T(0.75);
                    auto expect   = naive_gemm<T>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
                    auto got      = c;
                    simd::gemm<T>(ta, tb, m, n, k, alpha, a.data(), lda, b.data(), ldb, beta, got.data(), ldc);
                    double worst = 0;
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j)
                            worst = std::max(worst, std::abs(static_cast<double>(got[i * ldc + j] - expect[i * ldc + j])));
                    INFO("isa=" << simd::isa_name(isa) << " m=" << m << " n=" << n << " k=" << k << " ta=" << ta
                                << " tb=" << tb);
                    CHECK(worst <= tol * std::sqrt(static_cast<double>(k)));
                    // Padding columns of C are never written.
                    for (int i = 0; i < m; ++i)
                        for (int j = n; j < ldc; ++j) CHECK(got[i * ldc + j] == c[i * ldc + j]);
                }
            }
        }
    }
}

}  // namespace

TEST_SUITE("simd") {

TEST_CASE("runtime selection") {
    const Isa best = simd::detected_isa();
    CHECK(simd::isa_supported(Isa::scalar));
    CHECK(simd::isa_supported(best));
    {
        simd::ScopedIsa s(Isa::scalar);
        CHECK(simd::active_isa() == Isa::scalar);
    }
    CHECK(simd::parse_isa("avx2") == Isa::avx2);
    CHECK_FALSE(simd::parse_isa("sse9").has_value());
    CHECK(std::string(simd::isa_name(Isa::avx512)) == "avx512");
}

TEST_CASE("gemm matches a naive oracle on every kernel set") {
    check_gemm<float>(2e-6);
    check_gemm<double>(1e-14);
}

TEST_CASE("micro kernels agree across ISAs") {
    for (Isa isa : available()) {
        const auto& ks = simd::detail::kernels_for<double>(isa);
        const int mr = ks.gemm.mr, nr = ks.gemm.nr, kc = 37;
        std::vector<double> a(static_cast<std::size_t>(kc) * mr), b(static_cast<std::size_t>(kc) * nr), acc(mr * nr);
        Rng rng(3);
        for (auto& v : a) v = rng.uniform(-1, 1);
        for (auto& v : b) v = rng.uniform(-1, 1);
        ks.gemm.run(kc, a.data(), b.data(), acc.data());
        for (int i = 0; i < mr; ++i) {
            for (int j = 0; j < nr; ++j) {
                double s = 0;
                for (int p = 0; p < kc; ++p) s += a[p * mr + i] * b[p * nr + j];
                CHECK(acc[i * nr + j] == doctest::Approx(s).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("axpby and dot agree with scalar loops") {
    for (Isa isa : available()) {
        simd::ScopedIsa scoped(isa);
        for (std::size_t n : {0u, 1u, 7u, 16u, 33u, 1000u}) {
            std::vector<float> x(n), y(n);
            std::vector<double> xd(n), yd(n);
            Rng rng(n + 1);
            for (std::size_t i = 0; i < n; ++i) {
                x[i] = static_cast<float>(rng.uniform(-1, 1));
                y[i] = static_cast<float>(rng.uniform(-1, 1));
                xd[i] = x[i];
                yd[i] = y[i];
            }
            double ref = 0;
            for (std::size_t i = 0; i < n; ++i) ref += xd[i] * yd[i];
            CHECK(simd::dot<double>(n, xd.data(), yd.data()) == doctest::Approx(ref).epsilon(1e-12));
            CHECK(simd::dot<float>(n, x.data(), y.data()) == doctest::Approx(ref).epsilon(1e-4).scale(1.0));
            auto y2 = y;
            simd::axpby<float>(n, 2.0f, x.data(), -0.5f, y2.data());
            for (std::size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(2.0f * x[i] - 0.5f * y[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("convolution forward and backward are ISA independent") {
    const auto x0 = testing::random_tensor<double>({2, 5, 9, 9}, 1);
    const auto w0 = testing::random_tensor<double>({6, 5, 3, 3}, 2);
    const auto b0 = testing::random_tensor<double>({6}, 3);
    Tensor<double> ref_y, ref_gx, ref_gw;
    bool first = true;
    for (Isa isa : available()) {
        simd::ScopedIsa scoped(isa);
        ag::Var<double> x(x0, true), w(w0, true), b(b0, true);
        auto y = ag::conv2d(x, w, b, 2, 1);
        ag::sum(ag::mul(y, y)).backward();
        if (first) {
            ref_y  = y.value();
            ref_gx = x.grad();
            ref_gw = w.grad();
            first  = false;
            continue;
        }
        CHECK(max_abs_diff(y.value(), ref_y) < 1e-12);
        CHECK(max_abs_diff(x.grad(), ref_gx) < 1e-11);
        CHECK(max_abs_diff(w.grad(), ref_gw) < 1e-11);
    }
}

}
