#pragma once

#include <cmath>
#include <cstdint>

#include "icc/matrix.hpp"

namespace icc {

// SplitMix64 generator. State transition and output mix use the documented
// constants, so streams are bit-identical across platforms for a given seed.
// Gaussians come from Box-Muller pairs; the second member of each pair is
// served on the next call.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1): top 53 bits scaled by 2^-53.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo reduction; the bias at 64 bits is
    // immaterial next to the determinism it buys.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller. 1 - uniform() lies in (0, 1], keeping
    // the log argument positive.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline void fill_gauss(Matrix2D& m, Rng& rng) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gauss();
}

inline Matrix2D random_gauss(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix2D m(rows, cols);
    fill_gauss(m, rng);
    return m;
}

inline void fill_uniform(Matrix2D& m, Rng& rng, double lo = 0.0, double hi = 1.0) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform();
}

} // namespace icc
