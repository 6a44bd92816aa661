// Compiled with -mavx2 -mfma. Only reached when CPUID reports both.

#include "ssdd/simd.hpp"

#include <immintrin.h>

namespace ssdd::simd::detail {

namespace {

constexpr int kMr = 6;

// acc rows of 16 floats (two ymm) or 8 doubles (two ymm).
void micro_avx2_f32(int kc, const float* a, const float* b, float* acc) {
    __m256 c[kMr][2];
#pragma GCC unroll 6
    for (int i = 0; i < kMr; ++i) {
        c[i][0] = _mm256_setzero_ps();
        c[i][1] = _mm256_setzero_ps();
    }
    for (int p = 0; p < kc; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b);
        const __m256 b1 = _mm256_loadu_ps(b + 8);
#pragma GCC unroll 6
        for (int i = 0; i < kMr; ++i) {
            const __m256 ai = _mm256_broadcast_ss(a + i);
            c[i][0]         = _mm256_fmadd_ps(ai, b0, c[i][0]);
            c[i][1]         = _mm256_fmadd_ps(ai, b1, c[i][1]);
        }
        a += kMr;
        b += 16;
    }
#pragma GCC unroll 6
    for (int i = 0; i < kMr; ++i) {
        _mm256_storeu_ps(acc + i * 16, c[i][0]);
        _mm256_storeu_ps(acc + i * 16 + 8, c[i][1]);
    }
}

void micro_avx2_f64(int kc, const double* a, const double* b, double* acc) {
    __m256d c[kMr][2];
#pragma GCC unroll 6
    for (int i = 0; i < kMr; ++i) {
        c[i][0] = _mm256_setzero_pd();
        c[i][1] = _mm256_setzero_pd();
    }
    for (int p = 0; p < kc; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b);
        const __m256d b1 = _mm256_loadu_pd(b + 4);
#pragma GCC unroll 6
        for (int i = 0; i < kMr; ++i) {
            const __m256d ai = _mm256_broadcast_sd(a + i);
            c[i][0]          = _mm256_fmadd_pd(ai, b0, c[i][0]);
            c[i][1]          = _mm256_fmadd_pd(ai, b1, c[i][1]);
        }
        a += kMr;
        b += 8;
    }
#pragma GCC unroll 6
    for (int i = 0; i < kMr; ++i) {
        _mm256_storeu_pd(acc + i * 8, c[i][0]);
        _mm256_storeu_pd(acc + i * 8 + 4, c[i][1]);
    }
}

void axpby_avx2_f32(std::size_t n, float alpha, const float* x, float beta, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    const __m256 vb = _mm256_set1_ps(beta);
    std::size_t i   = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 r = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_mul_ps(vb, _mm256_loadu_ps(y + i)));
        _mm256_storeu_ps(y + i, r);
    }
    for (; i < n; ++i) {
        y[i] = alpha * x[i] + beta * y[i];
    }
}

void axpby_avx2_f64(std::size_t n, double alpha, const double* x, double beta, double* y) {
    const __m256d va = _mm256_set1_pd(alpha);
    const __m256d vb = _mm256_set1_pd(beta);
    std::size_t i    = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_mul_pd(vb, _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i, r);
    }
    for (; i < n; ++i) {
        y[i] = alpha * x[i] + beta * y[i];
    }
}

float dot_avx2_f32(std::size_t n, const float* x, const float* y) {
    __m256 s0     = _mm256_setzero_ps();
    __m256 s1     = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
    }
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, _mm256_add_ps(s0, s1));
    float s = 0;
    for (float v : lanes) {
        s += v;
    }
    for (; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

double dot_avx2_f64(std::size_t n, const double* x, const double* y) {
    __m256d s0    = _mm256_setzero_pd();
    __m256d s1    = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
    double s = 0;
    for (double v : lanes) {
        s += v;
    }
    for (; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

}  // namespace

template <>
KernelSet<float> avx2_kernels<float>() {
    KernelSet<float> k;
    k.gemm  = {kMr, 16, &micro_avx2_f32};
    k.axpby = &axpby_avx2_f32;
    k.dot   = &dot_avx2_f32;
    return k;
}

template <>
KernelSet<double> avx2_kernels<double>() {
    KernelSet<double> k;
    k.gemm  = {kMr, 8, &micro_avx2_f64};
    k.axpby = &axpby_avx2_f64;
    k.dot   = &dot_avx2_f64;
    return k;
}

}  // namespace ssdd::simd::detail
