#include "ssdd/simd.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <vector>

namespace ssdd::simd {

namespace {

Isa probe_cpu() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("fma")) {
        return Isa::avx512;
    }
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return Isa::avx2;
    }
#endif
    return Isa::scalar;
}

Isa clamp_to_supported(Isa wanted) {
    return static_cast<Isa>(std::min(static_cast<int>(wanted), static_cast<int>(detected_isa())));
}

std::atomic<int>& active_slot() {
    static std::atomic<int> slot = [] {
        Isa isa = detected_isa();
        if (const char* env = std::getenv("SSDD_SIMD")) {
            if (auto parsed = parse_isa(env)) {
                isa = clamp_to_supported(*parsed);
            }
        }
        return static_cast<int>(isa);
    }();
    return slot;
}

}  // namespace

Isa detected_isa() {
    static const Isa isa = probe_cpu();
    return isa;
}

Isa active_isa() { return static_cast<Isa>(active_slot().load(std::memory_order_relaxed)); }

Isa set_isa(Isa isa) {
    const Isa chosen = clamp_to_supported(isa);
    active_slot().store(static_cast<int>(chosen), std::memory_order_relaxed);
    return chosen;
}

bool isa_supported(Isa isa) { return static_cast<int>(isa) <= static_cast<int>(detected_isa()); }

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::avx512: return "avx512";
    }
    return "unknown";
}

std::optional<Isa> parse_isa(std::string_view name) {
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2") return Isa::avx2;
    if (name == "avx512") return Isa::avx512;
    return std::nullopt;
}

namespace detail {

template <class T>
const KernelSet<T>& kernels_for(Isa isa) {
    static const KernelSet<T> scalar = scalar_kernels<T>();
#if defined(SSDD_HAVE_X86_KERNELS)
    static const KernelSet<T> avx2   = avx2_kernels<T>();
    static const KernelSet<T> avx512 = avx512_kernels<T>();
    switch (isa) {
        case Isa::avx512: return avx512;
        case Isa::avx2: return avx2;
        case Isa::scalar: break;
    }
#else
    (void)isa;
#endif
    return scalar;
}

template const KernelSet<float>& kernels_for<float>(Isa);
template const KernelSet<double>& kernels_for<double>(Isa);

}  // namespace detail

namespace {

constexpr int kKc = 256;
constexpr int kMcTarget = 96;
constexpr int kNcTarget = 2048;

template <class T>
struct PackBuffers {
    std::vector<T> a;
    std::vector<T> b;
    std::vector<T> acc;
};

template <class T>
PackBuffers<T>& pack_buffers() {
    thread_local PackBuffers<T> buffers;
    return buffers;
}

}  // namespace

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
    if (m <= 0 || n <= 0) {
        return;
    }
    for (int i = 0; i < m; ++i) {
        T* row = c + static_cast<std::size_t>(i) * ldc;
        if (beta == T(0)) {
            std::fill(row, row + n, T(0));
        } else if (beta != T(1)) {
            for (int j = 0; j < n; ++j) {
                row[j] *= beta;
            }
        }
    }
    if (k <= 0 || alpha == T(0)) {
        return;
    }

    const auto& uk = detail::kernels_for<T>(active_isa()).gemm;
    const int mr   = uk.mr;
    const int nr   = uk.nr;
    const int mc_block = std::max(mr, (kMcTarget / mr) * mr);
    const int nc_block = std::max(nr, (kNcTarget / nr) * nr);

    auto& buf = pack_buffers<T>();
    buf.acc.resize(static_cast<std::size_t>(mr) * nr);

    for (int jc = 0; jc < n; jc += nc_block) {
        const int nc       = std::min(nc_block, n - jc);
        const int n_panels = (nc + nr - 1) / nr;
        for (int pc = 0; pc < k; pc += kKc) {
            const int kc = std::min(kKc, k - pc);

            buf.b.resize(static_cast<std::size_t>(n_panels) * kc * nr);
            for (int jp = 0; jp < n_panels; ++jp) {
                T* dst         = buf.b.data() + static_cast<std::size_t>(jp) * kc * nr;
                const int j0   = jc + jp * nr;
                const int cols = std::min(nr, n - j0);
                if (cols < nr) std::fill(dst, dst + static_cast<std::size_t>(kc) * nr, T(0));
                if (!trans_b) {
                    for (int p = 0; p < kc; ++p) {
                        const T* src = b + static_cast<std::size_t>(pc + p) * ldb + j0;
                        std::copy(src, src + cols, dst + static_cast<std::size_t>(p) * nr);
                    }
                } else {
                    for (int j = 0; j < cols; ++j) {
                        const T* src = b + static_cast<std::size_t>(j0 + j) * ldb + pc;
                        for (int p = 0; p < kc; ++p) {
                            dst[static_cast<std::size_t>(p) * nr + j] = src[p];
                        }
                    }
                }
            }

            for (int ic = 0; ic < m; ic += mc_block) {
                const int mc       = std::min(mc_block, m - ic);
                const int m_panels = (mc + mr - 1) / mr;
                buf.a.resize(static_cast<std::size_t>(m_panels) * kc * mr);
                for (int ip = 0; ip < m_panels; ++ip) {
                    T* dst         = buf.a.data() + static_cast<std::size_t>(ip) * kc * mr;
                    const int i0   = ic + ip * mr;
                    const int rows = std::min(mr, m - i0);
                    if (rows < mr) std::fill(dst, dst + static_cast<std::size_t>(kc) * mr, T(0));
                    if (trans_a) {
                        for (int p = 0; p < kc; ++p) {
                            const T* src = a + static_cast<std::size_t>(pc + p) * lda + i0;
                            std::copy(src, src + rows, dst + static_cast<std::size_t>(p) * mr);
                        }
                    } else {
                        for (int i = 0; i < rows; ++i) {
                            const T* src = a + static_cast<std::size_t>(i0 + i) * lda + pc;
                            for (int p = 0; p < kc; ++p) {
                                dst[static_cast<std::size_t>(p) * mr + i] = src[p];
                            }
                        }
                    }
                }

                for (int jp = 0; jp < n_panels; ++jp) {
                    const T* bp    = buf.b.data() + static_cast<std::size_t>(jp) * kc * nr;
                    const int j0   = jc + jp * nr;
                    const int cols = std::min(nr, n - j0);
                    for (int ip = 0; ip < m_panels; ++ip) {
                        const T* ap    = buf.a.data() + static_cast<std::size_t>(ip) * kc * mr;
                        const int i0   = ic + ip * mr;
                        const int rows = std::min(mr, m - i0);
                        uk.run(kc, ap, bp, buf.acc.data());
                        for (int i = 0; i < rows; ++i) {
                            T* crow       = c + static_cast<std::size_t>(i0 + i) * ldc + j0;
                            const T* arow = buf.acc.data() + static_cast<std::size_t>(i) * nr;
                            if (alpha == T(1)) {
                                for (int j = 0; j < cols; ++j) crow[j] += arow[j];
                            } else {
                                for (int j = 0; j < cols; ++j) crow[j] += alpha * arow[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void axpby(std::size_t n, T alpha, const T* x, T beta, T* y) {
    detail::kernels_for<T>(active_isa()).axpby(n, alpha, x, beta, y);
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    return detail::kernels_for<T>(active_isa()).dot(n, x, y);
}

template void gemm<float>(bool, bool, int, int, int, float, const float*, int, const float*, int, float, float*, int);
template void gemm<double>(bool, bool, int, int, int, double, const double*, int, const double*, int, double, double*,
                           int);
template void axpby<float>(std::size_t, float, const float*, float, float*);
template void axpby<double>(std::size_t, double, const double*, double, double*);
template float dot<float>(std::size_t, const float*, const float*);
template double dot<double>(std::size_t, const double*, const double*);

}  // namespace ssdd::simd
