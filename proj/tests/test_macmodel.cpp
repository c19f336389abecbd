#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "icc/experiment.hpp"
#include "icc/macmodel.hpp"

using namespace icc;

namespace {

double rel_gap(std::uint64_t got, double expect) {
    return std::abs(static_cast<double>(got) - expect) / expect;
}

ModelConfig toy_config() {
    ModelConfig c;
    c.depth = 2;
    c.hidden = 32;
    c.heads = 4;
    c.tokens = 16;
    c.cond_classes = 10;
    return c;
}

} // namespace

TEST_CASE("DiT-XL/2 non-caching rows within 2%") {
    const ArchSpec arch = dit_xl2_arch();
    REQUIRE(rel_gap(estimate_macs(arch, 40, ExecMode::NoCache, 1, 0), 9.49e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 30, ExecMode::NoCache, 1, 0), 7.12e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 20, ExecMode::NoCache, 1, 0), 4.75e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 10, ExecMode::NoCache, 1, 0), 2.37e12) < 0.02);
    // the 250-step row cross-validates the fitted overhead constant
    REQUIRE(rel_gap(estimate_macs(arch, 250, ExecMode::NoCache, 1, 0), 59.31e12) < 0.02);
}

TEST_CASE("DiT-XL/2 naive caching rows within 2%") {
    const ArchSpec arch = dit_xl2_arch();
    REQUIRE(rel_gap(estimate_macs(arch, 80, ExecMode::Naive, 2, 0), 9.51e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 60, ExecMode::Naive, 2, 0), 7.13e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 40, ExecMode::Naive, 2, 0), 4.75e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 20, ExecMode::Naive, 2, 0), 2.38e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 120, ExecMode::Naive, 3, 0), 9.53e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 90, ExecMode::Naive, 3, 0), 7.15e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 60, ExecMode::Naive, 3, 0), 4.76e12) < 0.02);
    REQUIRE(rel_gap(estimate_macs(arch, 30, ExecMode::Naive, 3, 0), 2.38e12) < 0.02);
}

TEST_CASE("DiT-XL/2 increment-calibrated rows within 10%") {
    const ArchSpec arch = dit_xl2_arch();
    struct Row {
        int rank, steps;
        double macs;
    };
    const Row rows[] = {
        {128, 66, 9.40e12}, {192, 62, 9.40e12}, {256, 58, 9.35e12},
        {128, 50, 7.11e12}, {192, 46, 6.98e12}, {256, 44, 7.09e12},
        {128, 32, 4.55e12}, {192, 30, 4.55e12}, {256, 28, 4.51e12},
        {128, 16, 2.27e12}, {192, 14, 2.12e12}, {256, 14, 2.26e12},
    };
    for (const Row& r : rows)
        REQUIRE(rel_gap(estimate_macs(arch, r.steps, ExecMode::Calibrated, 2, r.rank),
                        r.macs) < 0.10);
}

TEST_CASE("toy closed form, hand-verified") {
    // L=2, d=32, N=16 blocks: 2 * (12*32^2*16 + 2*16^2*32) = 425984
    ModelConfig cfg = toy_config();
    ArchSpec arch = toy_arch(cfg);
    REQUIRE(block_macs_full_forward(arch) ==
            2ull * (12ull * 32 * 32 * 16 + 2ull * 16 * 16 * 32));
    REQUIRE(block_macs_full_forward(arch) == 425984ull);
}

TEST_CASE("cfg doubles everything") {
    ModelConfig cfg = toy_config();
    const std::uint64_t once = estimate_macs(toy_arch(cfg, false), 8, ExecMode::Naive, 2, 0);
    const std::uint64_t twice = estimate_macs(toy_arch(cfg, true), 8, ExecMode::Naive, 2, 0);
    REQUIRE(twice == 2 * once);
}

TEST_CASE("estimate parameter validation") {
    const ArchSpec arch = dit_xl2_arch();
    REQUIRE_THROWS_AS(estimate_macs(arch, 0, ExecMode::NoCache, 1, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(estimate_macs(arch, 10, ExecMode::Naive, 0, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(estimate_macs(arch, 10, ExecMode::Calibrated, 2, 1153),
                      std::invalid_argument);
}

TEST_CASE("analytic block MACs equal the measured ledger exactly") {
    ModelConfig mcfg = toy_config();
    ModelWeights model = init_weights(mcfg, 5);
    ExperimentConfig base;
    base.model = mcfg;
    base.weight_seed = 5;
    base.timesteps = 30;
    base.n_steps = 6;
    base.calib_size = 4;
    const ArchSpec arch = toy_arch(mcfg);

    for (ExecMode mode : {ExecMode::NoCache, ExecMode::Naive, ExecMode::Calibrated}) {
        for (int p : {1, 2, 3}) {
            for (int r : {0, 8, 32}) {
                if (mode != ExecMode::Calibrated && r != 0) continue;
                ExperimentConfig cfg = base;
                cfg.mode = mode;
                cfg.period = p;
                cfg.rank = r;
                cfg.seed = 100 + p * 10 + r;
                CalibParams calib;
                if (mode == ExecMode::Calibrated) calib = plain_svd_calib(model, r);
                RunOutput out = run_experiment(
                    model, cfg, mode == ExecMode::Calibrated ? &calib : nullptr);
                const MacEstimate est = estimate_macs_detail(arch, cfg.n_steps, mode, p, r);
                REQUIRE(out.ledger.block_layer_total() == est.block_total);
                // overhead (toy: just the head) matches too
                REQUIRE(out.ledger.total(MacKind::Overhead) == est.overhead_total);
            }
        }
    }
}

TEST_CASE("per-step ledger composition on a calibrated run") {
    ModelConfig mcfg = toy_config();
    ModelWeights model = init_weights(mcfg, 6);
    ExperimentConfig cfg;
    cfg.model = mcfg;
    cfg.timesteps = 20;
    cfg.n_steps = 4;
    cfg.mode = ExecMode::Calibrated;
    cfg.period = 2;
    cfg.rank = 8;
    CalibParams calib = plain_svd_calib(model, 8);
    RunOutput out = run_experiment(model, cfg, &calib);

    const ArchSpec arch = toy_arch(mcfg);
    for (int pos = 1; pos <= 4; ++pos) {
        const bool gather = (pos - 1) % 2 == 0;
        const std::uint64_t expect =
            (gather ? block_macs_full_forward(arch)
                    : block_macs_calibrated_forward(arch, 8)) +
            arch.overhead_macs_per_forward;
        REQUIRE(out.ledger.step_total(pos) == expect);
    }
}
