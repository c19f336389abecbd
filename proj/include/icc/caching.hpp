#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icc/calibration.hpp"
#include "icc/ledger.hpp"
#include "icc/matrix.hpp"
#include "icc/model.hpp"
#include "icc/samplers.hpp"
#include "icc/schedule.hpp"

namespace icc {

// ---------------------------------------------------------------------------
// Cache plan
// ---------------------------------------------------------------------------

// Binary gather matrix over (sampler step position, layer); scatter is its
// elementwise complement. Position 1 must gather everywhere and no layer may
// scatter before its first gather.
class CachePlan {
public:
    CachePlan() = default;
    CachePlan(int n_steps, int n_layers, std::vector<std::uint8_t> gather)
        : n_steps_(n_steps), n_layers_(n_layers), gather_(std::move(gather)) {
        if (static_cast<int>(gather_.size()) != n_steps * n_layers)
            throw std::invalid_argument("cache plan: gather matrix size mismatch");
        for (int l = 0; l < n_layers_; ++l) {
            if (!gather_at(1, l))
                throw std::invalid_argument("cache plan: first step must gather layer " +
                                            std::to_string(l));
        }
    }

    static CachePlan all_gather(int n_steps, int n_layers) {
        return CachePlan(n_steps, n_layers,
                         std::vector<std::uint8_t>(n_steps * n_layers, 1));
    }

    int n_steps() const { return n_steps_; }
    int n_layers() const { return n_layers_; }

    // position is the 1-based sampler step position
    bool gather_at(int position, int layer_flat) const {
        if (position < 1 || position > n_steps_ || layer_flat < 0 || layer_flat >= n_layers_)
            throw std::out_of_range("cache plan: position " + std::to_string(position) +
                                    ", layer " + std::to_string(layer_flat) +
                                    " outside plan");
        return gather_[(position - 1) * n_layers_ + layer_flat] != 0;
    }
    bool scatter_at(int position, int layer_flat) const {
        return !gather_at(position, layer_flat);
    }

private:
    int n_steps_ = 0;
    int n_layers_ = 0;
    std::vector<std::uint8_t> gather_;
};

// Periodic plan: compute fully at every p-th visited step (position 1, 1+p,
// 1+2p, ...), identically for all layers; reuse the cache in between.
inline CachePlan fora_plan(int n_steps, int n_layers, int period) {
    if (period < 1) throw std::invalid_argument("fora_plan: period must be >= 1");
    if (n_steps < 1 || n_layers < 1)
        throw std::invalid_argument("fora_plan: need at least one step and one layer");
    std::vector<std::uint8_t> gather(static_cast<std::size_t>(n_steps) * n_layers, 0);
    for (int i = 1; i <= n_steps; ++i) {
        const std::uint8_t g = ((i - 1) % period == 0) ? 1 : 0;
        for (int l = 0; l < n_layers; ++l) gather[(i - 1) * n_layers + l] = g;
    }
    return CachePlan(n_steps, n_layers, std::move(gather));
}

// ---------------------------------------------------------------------------
// Layer cache and execution context
// ---------------------------------------------------------------------------

class CacheError : public std::runtime_error {
public:
    CacheError(const LayerId& id, int step)
        : std::runtime_error("cache: scatter from invalid slot at " + id.name() +
                             ", sampler step " + std::to_string(step)),
          layer(id), step_position(step) {}
    LayerId layer;
    int step_position;
};

// Stored (input, output) pair of one linear layer, written on gather steps.
struct LayerCache {
    struct Entry {
        Matrix2D input;
        Matrix2D output;
        bool valid = false;
        int source_step = -1;
    };
    std::vector<Entry> entries;

    void reset(int n_layers) { entries.assign(n_layers, {}); }
    Entry& at(const LayerId& id) { return entries[id.flat()]; }
    const Entry& at(const LayerId& id) const { return entries[id.flat()]; }
};

enum class ExecMode { NoCache, Naive, Calibrated };

inline const char* exec_mode_name(ExecMode m) {
    switch (m) {
    case ExecMode::NoCache: return "nocache";
    case ExecMode::Naive: return "naive";
    case ExecMode::Calibrated: return "calibrated";
    }
    return "?";
}

// Per-trajectory execution state: dispatches every linear layer to full
// compute, cache reuse, or increment-calibrated reuse according to the plan.
// Not shareable across trajectories.
class ExecutionContext : public LayerExecutor {
public:
    ExecutionContext(const ModelWeights& weights, ExecMode mode, CachePlan plan,
                     const CalibParams* calib = nullptr, MacLedger* ledger = nullptr,
                     TapRecord* taps = nullptr)
        : weights_(&weights), mode_(mode), plan_(std::move(plan)), calib_(calib),
          ledger_(ledger), taps_(taps) {
        if (mode_ == ExecMode::Calibrated) {
            if (!calib_)
                throw std::invalid_argument("calibrated mode requires calibration parameters");
            calib_->validate(weights.config);
        }
        cache_.reset(weights.config.n_layers());
        if (taps_) taps_->reset(weights.config.n_layers());
    }

    ExecMode mode() const { return mode_; }
    const CachePlan& plan() const { return plan_; }
    const LayerCache& cache() const { return cache_; }
    int step_position() const { return position_; }

    // Enter the 1-based sampler step position before each forward.
    void begin_step(int position) {
        if (mode_ != ExecMode::NoCache) {
            if (position < 1 || position > plan_.n_steps())
                throw std::out_of_range("begin_step: position " + std::to_string(position) +
                                        " outside plan of " + std::to_string(plan_.n_steps()) +
                                        " steps");
        }
        position_ = position;
        if (ledger_) ledger_->set_step(position);
        if (taps_) taps_->reset(weights_->config.n_layers());
    }

    bool is_gather(const LayerId& id) const {
        if (mode_ == ExecMode::NoCache) return true;
        return plan_.gather_at(position_, id.flat());
    }

    Matrix2D linear(const LayerId& id, const Matrix2D& x) override {
        if (is_gather(id)) {
            if (ledger_) {
                ledger_->set_layer(id.block, static_cast<int>(id.slot));
                ledger_->set_kind(MacKind::LinearFull);
            }
            Matrix2D y = FullComputeExecutor::affine(*weights_, id, x, ledger_);
            if (taps_) taps_->record(id, x, y);
            if (mode_ != ExecMode::NoCache) {
                LayerCache::Entry& e = cache_.at(id);
                e.input = x;
                e.output = y;
                e.valid = true;
                e.source_step = position_;
            }
            return y;
        }

        const LayerCache::Entry& e = cache_.at(id);
        if (!e.valid) throw CacheError(id, position_);
        if (mode_ == ExecMode::Naive) return e.output;

        // Calibrated: cached output plus the low-rank increment applied to
        // the input change. The bias cancels inside the difference.
        const LowRankFactors& lf = calib_->at(id);
        if (lf.a.cols() == 0) return e.output; // rank 0 falls back to plain reuse
        if (ledger_) {
            ledger_->set_layer(id.block, static_cast<int>(id.slot));
            ledger_->set_kind(MacKind::LinearIncrement);
        }
        Matrix2D delta = sub(x, e.input);
        Matrix2D reduced = matmul(delta, transpose(lf.b), ledger_);  // N x r
        Matrix2D increment = matmul(reduced, transpose(lf.a), ledger_); // N x C_o
        return add(e.output, increment);
    }

    bool reuse_module_outputs(int block) const override {
        if (mode_ != ExecMode::Naive) return false;
        for (int s = 0; s < kSlotsPerBlock; ++s)
            if (is_gather({block, static_cast<Slot>(s)})) return false;
        return true;
    }

    const Matrix2D& cached_output(const LayerId& id) const override {
        const LayerCache::Entry& e = cache_.at(id);
        if (!e.valid) throw CacheError(id, position_);
        return e.output;
    }

    MacLedger* ledger() const override { return ledger_; }

private:
    const ModelWeights* weights_;
    ExecMode mode_;
    CachePlan plan_;
    const CalibParams* calib_;
    MacLedger* ledger_;
    TapRecord* taps_;
    LayerCache cache_;
    int position_ = 0;
};

// ---------------------------------------------------------------------------
// Trajectory driver
// ---------------------------------------------------------------------------

struct TrajectoryResult {
    std::vector<int> visited_t;       // diffusion timestep per sampler step
    std::vector<Matrix2D> eps_hats;   // guided noise estimate per step
    std::vector<Matrix2D> latents;    // z after each sampler step
};

// Full reverse loop under one execution policy. Classifier-free guidance
// doubles the forwards through a second context (its own cache stream); DDPM
// draws its posterior noise from the supplied rng.
inline TrajectoryResult run_trajectory(const ModelWeights& model, const NoiseSchedule& sched,
                                       const SamplerRun& run, ExecutionContext& ctx,
                                       const Matrix2D& z_init, int cond,
                                       Rng* ddpm_rng = nullptr,
                                       ExecutionContext* uncond_ctx = nullptr) {
    run.validate(sched.timesteps);
    const int n = run.n_steps();
    if (ctx.mode() != ExecMode::NoCache && ctx.plan().n_steps() != n)
        throw std::invalid_argument("run_trajectory: plan covers " +
                                    std::to_string(ctx.plan().n_steps()) + " steps, sampler has " +
                                    std::to_string(n));
    const bool guided = run.guidance_scale != 1.0;
    if (guided && !uncond_ctx)
        throw std::invalid_argument("run_trajectory: guidance needs an unconditional context");
    if (run.kind == SamplerKind::DDPM && !ddpm_rng)
        throw std::invalid_argument("run_trajectory: DDPM needs an rng");

    TrajectoryResult result;
    result.visited_t = run.step_indices;
    result.eps_hats.reserve(n);
    result.latents.reserve(n);

    Matrix2D z = z_init;
    for (int i = 0; i < n; ++i) {
        const int position = i + 1;
        const int t = run.step_indices[i];
        const int t_prev = (i + 1 < n) ? run.step_indices[i + 1] : 0;

        ctx.begin_step(position);
        Matrix2D eps = forward(model, z, t, cond, ctx);
        if (guided && uncond_ctx) {
            uncond_ctx->begin_step(position);
            Matrix2D eps_uncond =
                forward(model, z, t, model.config.null_class(), *uncond_ctx);
            for (std::size_t k = 0; k < eps.size(); ++k)
                eps.data()[k] = eps_uncond.data()[k] +
                                run.guidance_scale * (eps.data()[k] - eps_uncond.data()[k]);
        }

        if (run.kind == SamplerKind::DDIM) {
            z = ddim_step(z, eps, t, t_prev, sched);
        } else {
            z = ddpm_step(z, eps, t, sched, *ddpm_rng);
        }
        result.eps_hats.push_back(std::move(eps));
        result.latents.push_back(z);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Single-step error probe
// ---------------------------------------------------------------------------

struct ProbeResult {
    Matrix2D measured;  // F(x_m) - (cached + increment)
    Matrix2D predicted; // (W - a b) applied to the input change
};

// Both sides of the single-step error identity for one layer: the realized
// correction error and the residual-weight prediction. Bias-free by
// construction, so the two agree up to rounding.
inline ProbeResult single_step_error_probe(const ModelWeights& model, const LayerId& layer,
                                           const Matrix2D& x_s, const Matrix2D& x_m,
                                           const LowRankFactors& factors) {
    if (!x_s.same_shape(x_m))
        throw ShapeError("probe: x_s is " + x_s.shape_str() + ", x_m is " + x_m.shape_str());
    const Matrix2D& w = model.weight(layer);

    Matrix2D cached = FullComputeExecutor::affine(model, layer, x_s, nullptr);
    Matrix2D exact = FullComputeExecutor::affine(model, layer, x_m, nullptr);
    Matrix2D delta = sub(x_m, x_s);

    Matrix2D corrected = cached;
    if (factors.a.cols() > 0) {
        Matrix2D increment = matmul(matmul(delta, transpose(factors.b)), transpose(factors.a));
        corrected = add(cached, increment);
    }

    Matrix2D residual_w = sub(w, low_rank_product(factors.a, factors.b));
    return ProbeResult{sub(exact, corrected), matmul(delta, transpose(residual_w))};
}

} // namespace icc
