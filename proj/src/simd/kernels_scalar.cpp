#include "ssdd/simd.hpp"

namespace ssdd::simd::detail {

namespace {

constexpr int kScalarMr = 4;
constexpr int kScalarNr = 4;

template <class T>
void micro_scalar(int kc, const T* a, const T* b, T* acc) {
    T sum[kScalarMr][kScalarNr] = {};
    for (int p = 0; p < kc; ++p) {
        const T* ap = a + p * kScalarMr;
        const T* bp = b + p * kScalarNr;
        for (int i = 0; i < kScalarMr; ++i) {
            for (int j = 0; j < kScalarNr; ++j) {
                sum[i][j] += ap[i] * bp[j];
            }
        }
    }
    for (int i = 0; i < kScalarMr; ++i) {
        for (int j = 0; j < kScalarNr; ++j) {
            acc[i * kScalarNr + j] = sum[i][j];
        }
    }
}

template <class T>
void axpby_scalar(std::size_t n, T alpha, const T* x, T beta, T* y) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = alpha * x[i] + beta * y[i];
    }
}

template <class T>
T dot_scalar(std::size_t n, const T* x, const T* y) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

}  // namespace

template <class T>
KernelSet<T> scalar_kernels() {
    KernelSet<T> k;
    k.gemm  = {kScalarMr, kScalarNr, &micro_scalar<T>};
    k.axpby = &axpby_scalar<T>;
    k.dot   = &dot_scalar<T>;
    return k;
}

template KernelSet<float> scalar_kernels<float>();
template KernelSet<double> scalar_kernels<double>();

}  // namespace ssdd::simd::detail
