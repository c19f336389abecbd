#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "icc/matrix.hpp"
#include "icc/rng.hpp"
#include "icc/schedule.hpp"

namespace icc {

enum class SamplerKind { DDPM, DDIM };

inline const char* sampler_kind_name(SamplerKind k) {
    return k == SamplerKind::DDPM ? "ddpm" : "ddim";
}

// One reverse trajectory's visiting plan: diffusion timesteps in strictly
// decreasing order, ending at 1.
struct SamplerRun {
    SamplerKind kind = SamplerKind::DDIM;
    std::vector<int> step_indices;
    double guidance_scale = 1.0;

    int n_steps() const { return static_cast<int>(step_indices.size()); }

    void validate(int timesteps) const {
        if (step_indices.empty()) throw std::invalid_argument("sampler run: no steps");
        if (step_indices.back() != 1)
            throw std::invalid_argument("sampler run: last step index must be 1");
        int prev = timesteps + 1;
        for (int t : step_indices) {
            if (t < 1 || t > timesteps)
                throw std::invalid_argument("sampler run: step index " + std::to_string(t) +
                                            " outside [1, " + std::to_string(timesteps) + "]");
            if (t >= prev)
                throw std::invalid_argument("sampler run: step indices not strictly decreasing");
            prev = t;
        }
        if (kind == SamplerKind::DDPM) {
            for (std::size_t i = 0; i + 1 < step_indices.size(); ++i)
                if (step_indices[i] - step_indices[i + 1] != 1)
                    throw std::invalid_argument(
                        "sampler run: DDPM requires consecutive timesteps (no respacing)");
        }
    }
};

// Uniform-stride respacing from T down to 1, both endpoints included.
// index_k = round(T - k (T-1)/(n-1)); consecutive exact values differ by at
// least 1, so the rounded list is strictly decreasing.
inline std::vector<int> make_step_indices(int timesteps, int n_steps) {
    if (n_steps < 1 || n_steps > timesteps)
        throw std::invalid_argument("make_step_indices: need 1 <= n_steps <= T, got n_steps=" +
                                    std::to_string(n_steps) + " T=" + std::to_string(timesteps));
    if (n_steps == 1) return {1};
    std::vector<int> indices(n_steps);
    const double stride = static_cast<double>(timesteps - 1) / static_cast<double>(n_steps - 1);
    for (int k = 0; k < n_steps; ++k)
        indices[k] = static_cast<int>(std::llround(static_cast<double>(timesteps) - k * stride));
    indices.back() = 1;
    return indices;
}

// DDPM ancestral update. The injected noise vanishes at t = 1.
inline Matrix2D ddpm_step(const Matrix2D& z_t, const Matrix2D& eps_hat, int t,
                          const NoiseSchedule& sched, Rng& rng) {
    sched.check(t);
    if (!z_t.same_shape(eps_hat))
        throw ShapeError("ddpm_step: z is " + z_t.shape_str() + ", eps_hat is " +
                         eps_hat.shape_str());
    const double alpha = sched.alpha_at(t);
    const double abar = sched.alpha_bar_at(t);
    const double mean_scale = 1.0 / std::sqrt(alpha);
    const double eps_scale = (1.0 - alpha) / std::sqrt(1.0 - abar);
    const double noise_scale = sched.sigma_at(t);
    Matrix2D out(z_t.rows(), z_t.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = mean_scale * (z_t.data()[i] - eps_scale * eps_hat.data()[i]);
        if (t > 1 && noise_scale > 0.0) v += noise_scale * rng.gauss();
        out.data()[i] = v;
    }
    return out;
}

// Deterministic DDIM update (eta = 0): estimate z0 from the noise prediction
// and re-noise to the target timestep. t_prev = 0 lands on clean data.
inline Matrix2D ddim_step(const Matrix2D& z_t, const Matrix2D& eps_hat, int t, int t_prev,
                          const NoiseSchedule& sched) {
    sched.check(t);
    if (t_prev < 0 || t_prev >= t)
        throw std::invalid_argument("ddim_step: need 0 <= t_prev < t, got t=" +
                                    std::to_string(t) + " t_prev=" + std::to_string(t_prev));
    if (!z_t.same_shape(eps_hat))
        throw ShapeError("ddim_step: z is " + z_t.shape_str() + ", eps_hat is " +
                         eps_hat.shape_str());
    const double abar_t = sched.alpha_bar_at(t);
    const double abar_prev = sched.alpha_bar_at(t_prev);
    const double inv_root = 1.0 / std::sqrt(abar_t);
    const double noise_t = std::sqrt(1.0 - abar_t);
    const double root_prev = std::sqrt(abar_prev);
    const double noise_prev = std::sqrt(1.0 - abar_prev);
    Matrix2D out(z_t.rows(), z_t.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z0_hat = (z_t.data()[i] - noise_t * eps_hat.data()[i]) * inv_root;
        out.data()[i] = root_prev * z0_hat + noise_prev * eps_hat.data()[i];
    }
    return out;
}

} // namespace icc
