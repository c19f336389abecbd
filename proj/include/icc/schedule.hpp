#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "icc/matrix.hpp"

namespace icc {

// Per-timestep constants of the forward/reverse diffusion process. Vectors
// are stored for t = 1..T; alpha_bar_at(0) is defined as 1 (clean data).
struct NoiseSchedule {
    int timesteps = 0;
    std::vector<double> beta;      // beta_t
    std::vector<double> alpha;     // 1 - beta_t
    std::vector<double> alpha_bar; // running product of alpha
    std::vector<double> sigma;     // DDPM posterior std, sigma_1 = 0

    double beta_at(int t) const { return beta[check(t) - 1]; }
    double alpha_at(int t) const { return alpha[t - 1]; }
    double alpha_bar_at(int t) const {
        if (t == 0) return 1.0;
        return alpha_bar[check(t) - 1];
    }
    double sigma_at(int t) const { return sigma[check(t) - 1]; }

    int check(int t) const {
        if (t < 1 || t > timesteps)
            throw std::out_of_range("schedule: timestep " + std::to_string(t) +
                                    " outside [1, " + std::to_string(timesteps) + "]");
        return t;
    }
};

// Linear beta ramp, endpoints inclusive. sigma_t^2 is the DDPM posterior
// variance beta_t * (1 - abar_{t-1}) / (1 - abar_t), which vanishes at t = 1.
inline NoiseSchedule make_linear_schedule(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 2) throw std::invalid_argument("make_linear_schedule: need T >= 2");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.timesteps = timesteps;
    s.beta.resize(timesteps);
    s.alpha.resize(timesteps);
    s.alpha_bar.resize(timesteps);
    s.sigma.resize(timesteps);
    double running = 1.0;
    for (int t = 1; t <= timesteps; ++t) {
        const double frac = static_cast<double>(t - 1) / static_cast<double>(timesteps - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        const double prev_bar = running;
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        running *= 1.0 - b;
        s.alpha_bar[t - 1] = running;
        s.sigma[t - 1] = t == 1 ? 0.0 : std::sqrt(b * (1.0 - prev_bar) / (1.0 - running));
    }
    return s;
}

// Closed-form forward noising: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
inline Matrix2D forward_noising(const Matrix2D& z0, int t, const Matrix2D& eps,
                                const NoiseSchedule& sched) {
    sched.check(t);
    if (!z0.same_shape(eps))
        throw ShapeError("forward_noising: z0 is " + z0.shape_str() + ", eps is " +
                         eps.shape_str());
    const double abar = sched.alpha_bar_at(t);
    const double signal = std::sqrt(abar);
    const double noise = std::sqrt(1.0 - abar);
    Matrix2D z = z0;
    for (std::size_t i = 0; i < z.size(); ++i)
        z.data()[i] = signal * z0.data()[i] + noise * eps.data()[i];
    return z;
}

} // namespace icc
