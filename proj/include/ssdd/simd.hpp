#pragma once

// Dense inner loops with runtime ISA selection.
//
// Every kernel has a scalar reference implementation plus AVX2/FMA and
// AVX-512 variants compiled in separate translation units. The active
// variant is picked once from CPUID and can be overridden with the
// SSDD_SIMD environment variable (scalar | avx2 | avx512) or set_isa().

#include <cstddef>
#include <optional>
#include <string_view>

namespace ssdd::simd {

enum class Isa { scalar = 0, avx2 = 1, avx512 = 2 };

Isa detected_isa();
Isa active_isa();
// Requests an ISA; falls back to the best supported one not above it.
// Returns the ISA actually selected.
Isa set_isa(Isa isa);
bool isa_supported(Isa isa);
const char* isa_name(Isa isa);
std::optional<Isa> parse_isa(std::string_view name);

// RAII override, used by equivalence tests.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
    ~ScopedIsa() { set_isa(previous_); }
    ScopedIsa(const ScopedIsa&)            = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

// Row-major C = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n. beta == 0 ignores the prior contents of C.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

// y = alpha * x + beta * y
template <class T>
void axpby(std::size_t n, T alpha, const T* x, T beta, T* y);

template <class T>
T dot(std::size_t n, const T* x, const T* y);

// Kernel table entries, one set per ISA. Exposed for the equivalence tests;
// normal callers go through gemm/axpby/dot above.
namespace detail {

template <class T>
struct MicroKernel {
    int mr = 0;
    int nr = 0;
    // acc (mr x nr, row-major) = sum_p a[p*mr + i] * b[p*nr + j]
    void (*run)(int kc, const T* a, const T* b, T* acc) = nullptr;
};

template <class T>
struct KernelSet {
    MicroKernel<T> gemm;
    void (*axpby)(std::size_t n, T alpha, const T* x, T beta, T* y) = nullptr;
    T (*dot)(std::size_t n, const T* x, const T* y)                  = nullptr;
};

template <class T>
const KernelSet<T>& kernels_for(Isa isa);

template <class T>
KernelSet<T> scalar_kernels();
template <class T>
KernelSet<T> avx2_kernels();
template <class T>
KernelSet<T> avx512_kernels();

template <>
KernelSet<float> avx2_kernels<float>();
template <>
KernelSet<double> avx2_kernels<double>();
template <>
KernelSet<float> avx512_kernels<float>();
template <>
KernelSet<double> avx512_kernels<double>();

}  // namespace detail
}  // namespace ssdd::simd
