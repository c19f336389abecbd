#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "icc/caching.hpp"
#include "icc/calibration.hpp"
#include "icc/divergence.hpp"
#include "icc/ledger.hpp"
#include "icc/macmodel.hpp"
#include "icc/model.hpp"
#include "icc/rng.hpp"
#include "icc/samplers.hpp"
#include "icc/schedule.hpp"

namespace icc {

// One fully specified toy-model run: everything needed to reproduce a
// trajectory bit for bit.
struct ExperimentConfig {
    ModelConfig model;
    std::uint64_t weight_seed = 0;

    int timesteps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    SamplerKind sampler = SamplerKind::DDIM;
    int n_steps = 20;
    double guidance_scale = 1.0;

    ExecMode mode = ExecMode::NoCache;
    int period = 2;
    int rank = 0;
    ScaleMethod method = ScaleMethod::Identity;
    int calib_size = 256;
    std::uint64_t calib_seed = 0;

    std::uint64_t seed = 0; // class draw, z_T draw, DDPM posterior noise
    int cond = -1;          // fixed class index, or -1 to draw from seed

    void validate() const {
        model.validate();
        if (mode == ExecMode::Calibrated &&
            (rank < 0 || rank > model.min_layer_dim()))
            throw std::invalid_argument("experiment: rank " + std::to_string(rank) +
                                        " outside [0, " +
                                        std::to_string(model.min_layer_dim()) + "]");
        if (mode != ExecMode::NoCache && period < 1)
            throw std::invalid_argument("experiment: period must be >= 1");
        if (n_steps < 1 || n_steps > timesteps)
            throw std::invalid_argument("experiment: need 1 <= steps <= timesteps");
    }
};

// Calibration parameter construction for one (method, rank). The calibration
// set is seeded with calib_seed, scale-estimation draws with calib_seed + 1.
inline CalibParams build_calib_params(const ModelWeights& model, const ExperimentConfig& cfg,
                                      ScaleMethod method, int rank) {
    if (method == ScaleMethod::Identity) return plain_svd_calib(model, rank);
    const NoiseSchedule sched =
        make_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    const CalibSet set = make_calib_set(model.config, cfg.calib_size, cfg.calib_seed);
    Rng rng(cfg.calib_seed + 1);
    std::vector<ScalePair> scales;
    switch (method) {
    case ScaleMethod::CA: scales = ca_svd_scales(model, set, sched, rng); break;
    case ScaleMethod::CD: scales = cd_svd_scales(model, set, sched, rng); break;
    case ScaleMethod::CDInputOnly:
        scales = reduced_variants(cd_svd_scales(model, set, sched, rng),
                                  ScaleReduction::InputOnly);
        break;
    case ScaleMethod::CDOutputOnly:
        scales = reduced_variants(cd_svd_scales(model, set, sched, rng),
                                  ScaleReduction::OutputOnly);
        break;
    case ScaleMethod::Identity: break;
    }
    return channel_aware_calib(model, scales, rank);
}

struct RunOutput {
    TrajectoryResult trajectory;
    MacLedger ledger;
    double wall_seconds = 0.0;
};

// One trajectory under the configured policy. Draw order from the run seed:
// class (when cond = -1), z_T elements, then DDPM posterior noise.
inline RunOutput run_experiment(const ModelWeights& model, const ExperimentConfig& cfg,
                                const CalibParams* calib) {
    cfg.validate();
    if (cfg.mode == ExecMode::Calibrated && !calib)
        throw std::invalid_argument("experiment: calibrated mode needs parameters");

    const NoiseSchedule sched =
        make_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    SamplerRun run;
    run.kind = cfg.sampler;
    run.step_indices = make_step_indices(cfg.timesteps, cfg.n_steps);
    run.guidance_scale = cfg.guidance_scale;

    Rng rng(cfg.seed);
    const int cond = cfg.cond >= 0 ? cfg.cond
                                   : static_cast<int>(rng.below(model.config.cond_classes));
    Matrix2D z_init = random_gauss(model.config.tokens, model.config.hidden, rng);

    RunOutput out;
    const CachePlan plan = cfg.mode == ExecMode::NoCache
                               ? CachePlan{}
                               : fora_plan(cfg.n_steps, model.config.n_layers(), cfg.period);
    ExecutionContext ctx(model, cfg.mode, plan,
                         cfg.mode == ExecMode::Calibrated ? calib : nullptr, &out.ledger);
    std::unique_ptr<ExecutionContext> uncond_ctx;
    if (run.guidance_scale != 1.0)
        uncond_ctx = std::make_unique<ExecutionContext>(
            model, cfg.mode, plan, cfg.mode == ExecMode::Calibrated ? calib : nullptr,
            &out.ledger);
    const auto t0 = std::chrono::steady_clock::now();
    out.trajectory =
        run_trajectory(model, sched, run, ctx, z_init, cond, &rng, uncond_ctx.get());
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count();
    return out;
}

// The no-caching oracle of the same config: identical seeds, mode forced.
inline ExperimentConfig oracle_config(ExperimentConfig cfg) {
    cfg.mode = ExecMode::NoCache;
    cfg.rank = 0;
    cfg.method = ScaleMethod::Identity;
    return cfg;
}

// ---------------------------------------------------------------------------
// Bench sweep
// ---------------------------------------------------------------------------

struct BenchCell {
    ExecMode mode = ExecMode::NoCache;
    ScaleMethod method = ScaleMethod::Identity;
    int period = 0; // 0 where irrelevant
    int rank = 0;
};

struct BenchRow {
    BenchCell cell;
    std::uint64_t seed = 0;
    std::uint64_t mac_total = 0;
    std::uint64_t block_macs = 0;
    double final_latent_mse = 0.0;
    double final_latent_max_abs = 0.0;
    double mean_step_eps_mse = 0.0;
    double wall_seconds = 0.0;
};

// Expand mode/period/rank lists into concrete cells, dropping the knobs a
// mode ignores.
inline std::vector<BenchCell> expand_bench_cells(const std::vector<ExecMode>& modes,
                                                 const std::vector<int>& periods,
                                                 const std::vector<int>& ranks,
                                                 ScaleMethod method) {
    std::vector<BenchCell> cells;
    for (ExecMode m : modes) {
        if (m == ExecMode::NoCache) {
            cells.push_back({m, ScaleMethod::Identity, 0, 0});
        } else if (m == ExecMode::Naive) {
            for (int p : periods) cells.push_back({m, ScaleMethod::Identity, p, 0});
        } else {
            for (int p : periods)
                for (int r : ranks) cells.push_back({m, method, p, r});
        }
    }
    return cells;
}

inline int bench_thread_count() {
    if (const char* env = std::getenv("ICC_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Run every (cell, seed) pair against the per-seed no-caching oracle.
// Independent pairs may execute on ICC_THREADS workers; the result layout is
// indexed, so the output rows are identical regardless of thread count.
inline std::vector<BenchRow> run_bench(const ModelWeights& model,
                                       const ExperimentConfig& base,
                                       const std::vector<BenchCell>& cells,
                                       const std::vector<std::uint64_t>& seeds) {
    // calibration parameters per (method, rank), built once up front
    std::map<std::pair<int, int>, CalibParams> calib_cache;
    for (const BenchCell& c : cells)
        if (c.mode == ExecMode::Calibrated) {
            const auto key = std::make_pair(static_cast<int>(c.method), c.rank);
            if (!calib_cache.count(key))
                calib_cache.emplace(key, build_calib_params(model, base, c.method, c.rank));
        }

    // per-seed oracle trajectories
    std::vector<RunOutput> oracles(seeds.size());
    auto oracle_job = [&](std::size_t si) {
        ExperimentConfig cfg = oracle_config(base);
        cfg.seed = seeds[si];
        oracles[si] = run_experiment(model, cfg, nullptr);
    };

    std::vector<BenchRow> rows(cells.size() * seeds.size());
    auto cell_job = [&](std::size_t flat) {
        const std::size_t ci = flat / seeds.size();
        const std::size_t si = flat % seeds.size();
        const BenchCell& c = cells[ci];
        ExperimentConfig cfg = base;
        cfg.mode = c.mode;
        cfg.method = c.method;
        cfg.period = c.period == 0 ? 1 : c.period;
        cfg.rank = c.rank;
        cfg.seed = seeds[si];
        const CalibParams* calib = nullptr;
        if (c.mode == ExecMode::Calibrated)
            calib = &calib_cache.at(std::make_pair(static_cast<int>(c.method), c.rank));
        RunOutput out = run_experiment(model, cfg, calib);
        DivergenceReport div = trajectory_divergence(out.trajectory, oracles[si].trajectory);

        BenchRow& row = rows[flat];
        row.cell = c;
        row.seed = seeds[si];
        row.mac_total = out.ledger.total();
        row.block_macs = out.ledger.block_layer_total();
        row.final_latent_mse = div.final_latent_mse;
        row.final_latent_max_abs = div.final_latent_max_abs;
        double eps_sum = 0.0;
        for (const StepDivergence& s : div.steps) eps_sum += s.eps_mse;
        row.mean_step_eps_mse = div.steps.empty() ? 0.0 : eps_sum / div.steps.size();
        row.wall_seconds = out.wall_seconds;
    };

    const int threads = bench_thread_count();
    auto parallel_for = [&](std::size_t count, auto&& job) {
        if (threads <= 1 || count <= 1) {
            for (std::size_t i = 0; i < count; ++i) job(i);
            return;
        }
        std::vector<std::thread> pool;
        std::size_t next = 0;
        const int n_workers = std::min<std::size_t>(threads, count);
        std::mutex mu;
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&]() {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= count) return;
                        i = next++;
                    }
                    job(i);
                }
            });
        for (std::thread& t : pool) t.join();
    };

    parallel_for(seeds.size(), oracle_job);
    parallel_for(rows.size(), cell_job);
    return rows;
}

} // namespace icc
