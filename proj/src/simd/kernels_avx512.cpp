// Compiled with -mavx512f -mfma. Only reached when CPUID reports AVX-512F.

#include "ssdd/simd.hpp"

#include <immintrin.h>

namespace ssdd::simd::detail {

namespace {

constexpr int kMr = 12;

void micro_avx512_f32(int kc, const float* a, const float* b, float* acc) {
    __m512 c[kMr][2];
#pragma GCC unroll 12
    for (int i = 0; i < kMr; ++i) {
        c[i][0] = _mm512_setzero_ps();
        c[i][1] = _mm512_setzero_ps();
    }
    for (int p = 0; p < kc; ++p) {
        const __m512 b0 = _mm512_loadu_ps(b);
        const __m512 b1 = _mm512_loadu_ps(b + 16);
#pragma GCC unroll 12
        for (int i = 0; i < kMr; ++i) {
            const __m512 ai = _mm512_set1_ps(a[i]);
            c[i][0]         = _mm512_fmadd_ps(ai, b0, c[i][0]);
            c[i][1]         = _mm512_fmadd_ps(ai, b1, c[i][1]);
        }
        a += kMr;
        b += 32;
    }
#pragma GCC unroll 12
    for (int i = 0; i < kMr; ++i) {
        _mm512_storeu_ps(acc + i * 32, c[i][0]);
        _mm512_storeu_ps(acc + i * 32 + 16, c[i][1]);
    }
}

void micro_avx512_f64(int kc, const double* a, const double* b, double* acc) {
    __m512d c[kMr][2];
#pragma GCC unroll 12
    for (int i = 0; i < kMr; ++i) {
        c[i][0] = _mm512_setzero_pd();
        c[i][1] = _mm512_setzero_pd();
    }
    for (int p = 0; p < kc; ++p) {
        const __m512d b0 = _mm512_loadu_pd(b);
        const __m512d b1 = _mm512_loadu_pd(b + 8);
#pragma GCC unroll 12
        for (int i = 0; i < kMr; ++i) {
            const __m512d ai = _mm512_set1_pd(a[i]);
            c[i][0]          = _mm512_fmadd_pd(ai, b0, c[i][0]);
            c[i][1]          = _mm512_fmadd_pd(ai, b1, c[i][1]);
        }
        a += kMr;
        b += 16;
    }
#pragma GCC unroll 12
    for (int i = 0; i < kMr; ++i) {
        _mm512_storeu_pd(acc + i * 16, c[i][0]);
        _mm512_storeu_pd(acc + i * 16 + 8, c[i][1]);
    }
}

void axpby_avx512_f32(std::size_t n, float alpha, const float* x, float beta, float* y) {
    const __m512 va = _mm512_set1_ps(alpha);
    const __m512 vb = _mm512_set1_ps(beta);
    std::size_t i   = 0;
    for (; i + 16 <= n; i += 16) {
        const __m512 r = _mm512_fmadd_ps(va, _mm512_loadu_ps(x + i), _mm512_mul_ps(vb, _mm512_loadu_ps(y + i)));
        _mm512_storeu_ps(y + i, r);
    }
    for (; i < n; ++i) {
        y[i] = alpha * x[i] + beta * y[i];
    }
}

void axpby_avx512_f64(std::size_t n, double alpha, const double* x, double beta, double* y) {
    const __m512d va = _mm512_set1_pd(alpha);
    const __m512d vb = _mm512_set1_pd(beta);
    std::size_t i    = 0;
    for (; i + 8 <= n; i += 8) {
        const __m512d r = _mm512_fmadd_pd(va, _mm512_loadu_pd(x + i), _mm512_mul_pd(vb, _mm512_loadu_pd(y + i)));
        _mm512_storeu_pd(y + i, r);
    }
    for (; i < n; ++i) {
        y[i] = alpha * x[i] + beta * y[i];
    }
}

float dot_avx512_f32(std::size_t n, const float* x, const float* y) {
    __m512 s0     = _mm512_setzero_ps();
    __m512 s1     = _mm512_setzero_ps();
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        s0 = _mm512_fmadd_ps(_mm512_loadu_ps(x + i), _mm512_loadu_ps(y + i), s0);
        s1 = _mm512_fmadd_ps(_mm512_loadu_ps(x + i + 16), _mm512_loadu_ps(y + i + 16), s1);
    }
    float s = _mm512_reduce_add_ps(_mm512_add_ps(s0, s1));
    for (; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

double dot_avx512_f64(std::size_t n, const double* x, const double* y) {
    __m512d s0    = _mm512_setzero_pd();
    __m512d s1    = _mm512_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i), s0);
        s1 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i + 8), _mm512_loadu_pd(y + i + 8), s1);
    }
    double s = _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
    for (; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

}  // namespace

template <>
KernelSet<float> avx512_kernels<float>() {
    KernelSet<float> k;
    k.gemm  = {kMr, 32, &micro_avx512_f32};
    k.axpby = &axpby_avx512_f32;
    k.dot   = &dot_avx512_f32;
    return k;
}

template <>
KernelSet<double> avx512_kernels<double>() {
    KernelSet<double> k;
    k.gemm  = {kMr, 16, &micro_avx512_f64};
    k.axpby = &axpby_avx512_f64;
    k.dot   = &dot_avx512_f64;
    return k;
}

}  // namespace ssdd::simd::detail
