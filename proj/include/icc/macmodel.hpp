#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "icc/caching.hpp"
#include "icc/model.hpp"

namespace icc {

// Analytic multiply-accumulate model for a DiT-style block stack, matching
// the engine's accounting: per block and forward, 12 d^2 N linear MACs plus
// 2 N^2 d attention nonlinearity; everything outside the blocks (embeddings,
// modulation, final head) is one per-forward overhead constant.
struct ArchSpec {
    int depth = 0;
    int hidden = 0;
    int heads = 1;
    int tokens = 0;
    int mlp_ratio = 4;
    bool cfg_enabled = false;
    std::uint64_t overhead_macs_per_forward = 0;

    void validate() const {
        if (depth < 1 || hidden < 1 || heads < 1 || tokens < 1 || mlp_ratio < 1)
            throw std::invalid_argument("arch spec: dimensions must be positive");
    }

    int min_layer_dim() const { return hidden; } // qkv/proj/fc1/fc2 all bottom out at d
};

// DiT-XL/2 at 256x256 (patch 2): 28 blocks, width 1152, 256 tokens, cfg
// batch doubling. The overhead constant is fitted once so that a 40-step
// no-caching DDIM run lands on 9.49e12 MACs, then held fixed everywhere.
inline ArchSpec dit_xl2_arch() {
    ArchSpec a;
    a.depth = 28;
    a.hidden = 1152;
    a.heads = 16;
    a.tokens = 256;
    a.mlp_ratio = 4;
    a.cfg_enabled = true;
    const std::uint64_t block =
        28ull * (12ull * 1152 * 1152 * 256 + 2ull * 256 * 256 * 1152);
    a.overhead_macs_per_forward = 9'490'000'000'000ull / 80 - block;
    return a;
}

inline ArchSpec toy_arch(const ModelConfig& cfg, bool cfg_enabled = false) {
    ArchSpec a;
    a.depth = cfg.depth;
    a.hidden = cfg.hidden;
    a.heads = cfg.heads;
    a.tokens = cfg.tokens;
    a.mlp_ratio = cfg.mlp_ratio;
    a.cfg_enabled = cfg_enabled;
    // the toy model's only non-block cost is the d x d head
    a.overhead_macs_per_forward =
        static_cast<std::uint64_t>(cfg.tokens) * cfg.hidden * cfg.hidden;
    return a;
}

// Block-layer MACs of one fully computed forward: 4 linears (3+1+4+4 = 12
// d^2 per token) plus QK^T and A V.
inline std::uint64_t block_macs_full_forward(const ArchSpec& a) {
    const std::uint64_t d = a.hidden, n = a.tokens;
    const std::uint64_t linear =
        (3ull + 1 + a.mlp_ratio + a.mlp_ratio) * d * d * n; // mlp_ratio = 4 -> 12 d^2 N
    const std::uint64_t attention = 2ull * n * n * d;
    return a.depth * (linear + attention);
}

// Block-layer MACs of a calibrated scatter forward: rank-r increments for all
// four linears, N (C_i + C_o) r each, plus the always-computed attention
// nonlinearity. With mlp_ratio = 4 the increment sum is 16 N d r.
inline std::uint64_t block_macs_calibrated_forward(const ArchSpec& a, int rank) {
    const std::uint64_t d = a.hidden, n = a.tokens;
    const std::uint64_t increment_channels =
        (3ull + 1) * d + (1ull + 1) * d + (1ull + a.mlp_ratio) * d + (a.mlp_ratio + 1ull) * d;
    const std::uint64_t increments = n * increment_channels * rank;
    const std::uint64_t attention = 2ull * n * n * d;
    return a.depth * (increments + attention);
}

struct MacEstimate {
    int gather_steps = 0;
    int scatter_steps = 0;
    std::uint64_t gather_forward = 0;  // block MACs of one gather forward
    std::uint64_t scatter_forward = 0; // block MACs of one scatter forward
    std::uint64_t block_total = 0;     // block MACs over all steps and cfg branches
    std::uint64_t overhead_total = 0;
    std::uint64_t total = 0;
};

// Total MACs of a sampler run under the periodic caching plan. Overhead is
// charged on every visited step; cfg doubles everything.
inline MacEstimate estimate_macs_detail(const ArchSpec& arch, int n_steps, ExecMode mode,
                                        int period, int rank) {
    arch.validate();
    if (n_steps < 1) throw std::invalid_argument("estimate: need at least one step");
    MacEstimate e;
    if (mode == ExecMode::NoCache) {
        e.gather_steps = n_steps;
    } else {
        if (period < 1) throw std::invalid_argument("estimate: period must be >= 1");
        for (int i = 1; i <= n_steps; ++i)
            ((i - 1) % period == 0 ? e.gather_steps : e.scatter_steps) += 1;
    }
    if (mode == ExecMode::Calibrated) {
        if (rank < 0 || rank > arch.min_layer_dim())
            throw std::invalid_argument("estimate: rank " + std::to_string(rank) +
                                        " outside [0, " +
                                        std::to_string(arch.min_layer_dim()) + "]");
        e.scatter_forward = block_macs_calibrated_forward(arch, rank);
    } else {
        e.scatter_forward = 0; // naive reuse bypasses the blocks entirely
    }
    e.gather_forward = block_macs_full_forward(arch);
    const std::uint64_t branches = arch.cfg_enabled ? 2 : 1;
    e.block_total = branches * (e.gather_steps * e.gather_forward +
                                e.scatter_steps * e.scatter_forward);
    e.overhead_total = branches * static_cast<std::uint64_t>(n_steps) *
                       arch.overhead_macs_per_forward;
    e.total = e.block_total + e.overhead_total;
    return e;
}

inline std::uint64_t estimate_macs(const ArchSpec& arch, int n_steps, ExecMode mode, int period,
                                   int rank) {
    return estimate_macs_detail(arch, n_steps, mode, period, rank).total;
}

} // namespace icc
