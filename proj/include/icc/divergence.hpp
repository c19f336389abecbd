#pragma once

#include <stdexcept>
#include <vector>

#include "icc/caching.hpp"
#include "icc/matrix.hpp"

namespace icc {

// Oracle-divergence metrics: how far a cached/calibrated trajectory drifts
// from the no-caching run of the identical model, seed, and config.
struct StepDivergence {
    int position = 0; // 1-based sampler step
    int t = 0;        // diffusion timestep
    double eps_mse = 0.0;
    double eps_max_abs = 0.0;
    double latent_mse = 0.0;
    double latent_max_abs = 0.0;
};

struct DivergenceReport {
    std::vector<StepDivergence> steps;
    double final_latent_mse = 0.0;
    double final_latent_max_abs = 0.0;
};

inline DivergenceReport trajectory_divergence(const TrajectoryResult& run,
                                              const TrajectoryResult& oracle) {
    if (run.visited_t != oracle.visited_t)
        throw std::invalid_argument("divergence: trajectories visited different timesteps");
    if (run.latents.size() != oracle.latents.size() ||
        run.eps_hats.size() != oracle.eps_hats.size())
        throw std::invalid_argument("divergence: trajectory lengths differ");

    DivergenceReport rep;
    rep.steps.reserve(run.latents.size());
    for (std::size_t i = 0; i < run.latents.size(); ++i) {
        StepDivergence d;
        d.position = static_cast<int>(i) + 1;
        d.t = run.visited_t[i];
        d.eps_mse = mean_squared_diff(run.eps_hats[i], oracle.eps_hats[i]);
        d.eps_max_abs = max_abs_diff(run.eps_hats[i], oracle.eps_hats[i]);
        d.latent_mse = mean_squared_diff(run.latents[i], oracle.latents[i]);
        d.latent_max_abs = max_abs_diff(run.latents[i], oracle.latents[i]);
        rep.steps.push_back(d);
    }
    if (!rep.steps.empty()) {
        rep.final_latent_mse = rep.steps.back().latent_mse;
        rep.final_latent_max_abs = rep.steps.back().latent_max_abs;
    }
    return rep;
}

} // namespace icc
