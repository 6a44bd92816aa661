#pragma once

#include "ssdd/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace ssdd {

// Seeded generator whose complete state is the underlying engine, so a
// serialized state restores the exact stream (normal draws keep no cache).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive range, unbiased.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return lo + static_cast<int>(r % span);
    }

    bool coin() { return (engine_() >> 63) != 0; }

    // Box-Muller, one draw per call.
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Independent child stream; does not advance this generator.
    Rng fork(std::uint64_t stream) const {
        std::seed_seq seq{static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(peek_state_hash()), 0x5d5dU};
        Rng child;
        child.engine_.seed(seq);
        return child;
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void restore(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
        require(!is.fail(), "rng", "malformed generator state");
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::uint64_t peek_state_hash() const {
        std::mt19937_64 copy = engine_;
        return copy();
    }

    std::mt19937_64 engine_;
};

template <class T>
Tensor<T> randn(const Shape& shape, Rng& rng) {
    Tensor<T> t(shape);
    for (auto& v : t) {
        v = static_cast<T>(rng.normal());
    }
    return t;
}

template <class T>
Tensor<T> rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(shape);
    for (auto& v : t) {
        v = static_cast<T>(rng.uniform(lo, hi));
    }
    return t;
}

}  // namespace ssdd
