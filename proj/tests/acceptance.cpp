// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "icc/caching.hpp"
#include "icc/calibration.hpp"
#include "icc/container.hpp"
#include "icc/divergence.hpp"
#include "icc/experiment.hpp"
#include "icc/macmodel.hpp"
#include "icc/model.hpp"
#include "icc/report.hpp"
#include "icc/rng.hpp"
#include "icc/svd.hpp"

using namespace icc;

namespace {

int g_failures = 0;

void report(int number, const std::string& title, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << "criterion " << number << ": " << title;
    if (!detail.empty()) std::cout << " -- " << detail;
    std::cout << "\n";
    if (!pass) ++g_failures;
}

struct Check {
    bool pass = true;
    std::ostringstream detail;
    void expect(bool cond, const std::string& msg) {
        if (!cond) {
            pass = false;
            if (detail.tellp() > 0) detail << "; ";
            detail << msg;
        }
    }
};

double rel_gap(std::uint64_t got, double expect) {
    return std::abs(static_cast<double>(got) - expect) / expect;
}

// Toy model pinned by the acceptance criteria: L=4, d=64, h=4, N=16, T=50,
// DDIM 20 steps, FORA period 2.
ExperimentConfig accept_toy_config() {
    ExperimentConfig c;
    c.model.depth = 4;
    c.model.hidden = 64;
    c.model.heads = 4;
    c.model.tokens = 16;
    c.model.cond_classes = 10;
    c.weight_seed = 2024;
    c.timesteps = 50;
    c.beta_start = 1e-4;
    c.beta_end = 0.02;
    c.n_steps = 20;
    c.period = 2;
    c.calib_size = 64;
    c.calib_seed = 11;
    return c;
}

// 1. Table-level MAC reproduction on the DiT-XL/2 preset.
void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    Check c;
    const ArchSpec arch = dit_xl2_arch();

    const std::pair<int, double> nocache_rows[] = {
        {40, 9.49e12}, {30, 7.12e12}, {20, 4.75e12}, {10, 2.37e12}};
    for (auto [steps, macs] : nocache_rows) {
        const double gap = rel_gap(estimate_macs(arch, steps, ExecMode::NoCache, 1, 0), macs);
        c.expect(gap < 0.02, "nocache " + std::to_string(steps) + " steps off by " +
                                 std::to_string(gap * 100) + "%");
    }
    const std::pair<int, double> naive_rows[] = {
        {80, 9.51e12}, {60, 7.13e12}, {40, 4.75e12}, {20, 2.38e12}};
    for (auto [steps, macs] : naive_rows) {
        const double gap = rel_gap(estimate_macs(arch, steps, ExecMode::Naive, 2, 0), macs);
        c.expect(gap < 0.02, "naive p2 " + std::to_string(steps) + " steps off by " +
                                 std::to_string(gap * 100) + "%");
    }
    struct IccRow {
        int rank, steps;
        double macs;
    };
    const IccRow icc_rows[] = {{128, 66, 9.40e12}, {192, 62, 9.40e12}, {256, 58, 9.35e12},
                               {128, 50, 7.11e12}, {192, 46, 6.98e12}, {256, 44, 7.09e12},
                               {128, 32, 4.55e12}, {192, 30, 4.55e12}, {256, 28, 4.51e12},
                               {128, 16, 2.27e12}, {192, 14, 2.12e12}, {256, 14, 2.26e12}};
    for (const IccRow& r : icc_rows) {
        const double gap =
            rel_gap(estimate_macs(arch, r.steps, ExecMode::Calibrated, 2, r.rank), r.macs);
        c.expect(gap < 0.10, "icc r" + std::to_string(r.rank) + " " +
                                 std::to_string(r.steps) + " steps off by " +
                                 std::to_string(gap * 100) + "%");
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(elapsed < 1.0, "runtime " + std::to_string(elapsed) + "s exceeds 1s");
    report(1, "MAC model vs paper rows (2% / 2% / 10%)", c.pass, c.detail.str());
}

// 2. Full-rank calibrated trajectory matches the oracle to 1e-6 max-abs.
void criterion_2() {
    Check c;
    ExperimentConfig cfg = accept_toy_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    CalibParams calib = plain_svd_calib(model, 64);
    cfg.mode = ExecMode::Calibrated;
    cfg.rank = 64;
    cfg.seed = 5;
    RunOutput run = run_experiment(model, cfg, &calib);
    RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);
    double worst = 0.0;
    for (std::size_t i = 0; i < run.trajectory.latents.size(); ++i)
        worst = std::max(worst, max_abs_diff(run.trajectory.latents[i],
                                             oracle.trajectory.latents[i]));
    c.expect(worst < 1e-6, "max-abs latent diff " + std::to_string(worst));
    report(2, "full-rank exactness (r=64, max-abs < 1e-6)", c.pass, c.detail.str());
}

// 3. r=0 calibrated and naive are bit-identical across 10 seeds.
void criterion_3() {
    Check c;
    ExperimentConfig cfg = accept_toy_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    CalibParams calib0 = plain_svd_calib(model, 0);
    for (int s = 0; s < 10; ++s) {
        cfg.seed = 300 + s;
        cfg.mode = ExecMode::Calibrated;
        cfg.rank = 0;
        RunOutput cal = run_experiment(model, cfg, &calib0);
        cfg.mode = ExecMode::Naive;
        RunOutput naive = run_experiment(model, cfg, nullptr);
        for (std::size_t i = 0; i < cal.trajectory.latents.size(); ++i)
            if (!(cal.trajectory.latents[i] == naive.trajectory.latents[i])) {
                c.expect(false, "seed " + std::to_string(cfg.seed) + " step " +
                                    std::to_string(i + 1) + " differs");
                break;
            }
    }
    report(3, "naive equivalence at rank 0 (bit-identical, 10 seeds)", c.pass,
           c.detail.str());
}

// 4. Single-step error identity and spectral bound over 100 probes.
void criterion_4() {
    Check c;
    ExperimentConfig cfg = accept_toy_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    std::vector<SvdFactors> spectra(cfg.model.n_layers());
    for (int f = 0; f < cfg.model.n_layers(); ++f)
        spectra[f] = thin_svd(model.weight(LayerId::from_flat(f)));

    Rng rng(404);
    for (int probe = 0; probe < 100; ++probe) {
        const int f = static_cast<int>(rng.below(cfg.model.n_layers()));
        const LayerId id = LayerId::from_flat(f);
        const int min_dim = static_cast<int>(spectra[f].sigma.size());
        const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(min_dim)));
        auto [wa, wb] = truncate_factors(spectra[f], r);
        LowRankFactors lf{std::move(wa), std::move(wb)};

        Matrix2D x_s = random_gauss(cfg.model.tokens, model.weight(id).cols(), rng);
        Matrix2D x_m = random_gauss(cfg.model.tokens, model.weight(id).cols(), rng);
        ProbeResult pr = single_step_error_probe(model, id, x_s, x_m, lf);

        const double change =
            frobenius_norm(sub(FullComputeExecutor::affine(model, id, x_m, nullptr),
                               FullComputeExecutor::affine(model, id, x_s, nullptr)));
        const double ident_gap =
            frobenius_norm(sub(pr.measured, pr.predicted)) / std::max(change, 1e-300);
        c.expect(ident_gap < 1e-10, "probe " + std::to_string(probe) + " identity gap " +
                                        std::to_string(ident_gap));

        const double sigma_next = spectra[f].sigma[r];
        const double dx = frobenius_norm(sub(x_m, x_s));
        c.expect(frobenius_norm(pr.measured) <= sigma_next * dx * (1.0 + 1e-9),
                 "probe " + std::to_string(probe) + " bound violated");
    }
    report(4, "error identity and sigma_{r+1} bound (100 probes)", c.pass, c.detail.str());
}

// 5. Eckart-Young plus monotonicity over 50 random matrices, all ranks.
void criterion_5() {
    Check c;
    Rng rng(505);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 2 + rng.below(127);
        const std::size_t cols = 2 + rng.below(95);
        Matrix2D w = random_gauss(rows, cols, rng);
        SvdFactors f = thin_svd(w);
        const std::size_t k = f.sigma.size();
        const double wnorm = frobenius_norm(w);
        double prev = 2.0 * wnorm;
        for (std::size_t r = 0; r <= k; ++r) {
            auto [wa, wb] = truncate_factors(f, r);
            const double err = frobenius_norm(sub(w, low_rank_product(wa, wb)));
            double tail = 0.0;
            for (std::size_t i = r; i < k; ++i) tail += f.sigma[i] * f.sigma[i];
            if (std::abs(err - std::sqrt(tail)) > 1e-8 * wnorm)
                c.expect(false, "trial " + std::to_string(trial) + " rank " +
                                    std::to_string(r) + " tail mismatch");
            if (err > prev + 1e-10 * wnorm)
                c.expect(false, "trial " + std::to_string(trial) + " rank " +
                                    std::to_string(r) + " not monotone");
            prev = err;
        }
    }
    report(5, "Eckart-Young and monotonicity (50 matrices up to 128x96)", c.pass,
           c.detail.str());
}

// 6. Channel-aware identities: identity scales and full-rank round trip.
void criterion_6() {
    Check c;
    ExperimentConfig cfg = accept_toy_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);

    CalibParams plain = plain_svd_calib(model, 16);
    CalibParams ident = channel_aware_calib(model, identity_scales(cfg.model), 16);
    for (int f = 0; f < cfg.model.n_layers(); ++f) {
        Matrix2D p1 = low_rank_product(plain.layers[f].a, plain.layers[f].b);
        Matrix2D p2 = low_rank_product(ident.layers[f].a, ident.layers[f].b);
        if (frobenius_norm(sub(p1, p2)) > 1e-9 * std::max(1.0, frobenius_norm(p1)))
            c.expect(false, "identity-scale mismatch at layer " + std::to_string(f));
    }

    Rng rng(606);
    std::vector<ScalePair> scales = identity_scales(cfg.model);
    for (ScalePair& sp : scales) {
        for (double& v : sp.input_scale) v = 0.05 + 8.0 * rng.uniform();
        for (double& v : sp.output_scale) v = 0.05 + 8.0 * rng.uniform();
    }
    CalibParams full = channel_aware_calib(model, scales, 64);
    for (int f = 0; f < cfg.model.n_layers(); ++f) {
        const Matrix2D& w = model.weight(LayerId::from_flat(f));
        Matrix2D rec = low_rank_product(full.layers[f].a, full.layers[f].b);
        if (frobenius_norm(sub(rec, w)) > 1e-9 * frobenius_norm(w))
            c.expect(false, "full-rank round trip failed at layer " + std::to_string(f));
    }
    report(6, "channel-aware identities (1e-9)", c.pass, c.detail.str());
}

// 7. Outlier benefit: CA scaling beats identity scaling on outlier-dominated
// input changes in at least 95 of 100 trials.
void criterion_7() {
    Check c;
    Rng rng(707);
    const std::size_t co = 64, ci = 48;
    const int r = 12; // 25% of min(co, ci)
    int wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Matrix2D w = random_gauss(co, ci, rng);
        const std::size_t outlier = rng.below(ci);
        std::vector<double> s_i(ci, 1.0), s_o(co, 1.0);
        s_i[outlier] = 100.0;

        LowRankFactors ca = channel_aware_factors(w, s_i, s_o, r);
        auto [pa, pb] = truncate_factors(thin_svd(w), r);

        // input change concentrated in the outlier channel, matching the
        // activation statistics the scale encodes
        Matrix2D dx(8, ci);
        fill_gauss(dx, rng);
        for (std::size_t i = 0; i < dx.rows(); ++i) dx(i, outlier) = 100.0 * rng.gauss();

        Matrix2D res_ca = sub(w, low_rank_product(ca.a, ca.b));
        Matrix2D res_plain = sub(w, low_rank_product(pa, pb));
        const double err_ca = frobenius_norm(matmul(dx, transpose(res_ca)));
        const double err_plain = frobenius_norm(matmul(dx, transpose(res_plain)));
        if (err_ca < err_plain) ++wins;
    }
    c.expect(wins >= 95, "CA won only " + std::to_string(wins) + "/100 trials");
    report(7, "outlier benefit (CA beats identity in >= 95/100)", c.pass, c.detail.str());
}

// 8. Mean final-latent error: calibrated below naive for plain SVD and for
// CD-SVD scales at the same rank, over 20 seeds.
void criterion_8() {
    Check c;
    ExperimentConfig cfg = accept_toy_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    const int r = 16; // 25% of min dimension 64

    CalibParams plain = plain_svd_calib(model, r);
    CalibParams cd = build_calib_params(model, cfg, ScaleMethod::CD, r);

    double mse_plain = 0.0, mse_cd = 0.0, mse_naive = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        cfg.seed = 800 + s;
        RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);

        cfg.mode = ExecMode::Calibrated;
        cfg.rank = r;
        cfg.method = ScaleMethod::Identity;
        RunOutput a = run_experiment(model, cfg, &plain);
        mse_plain += trajectory_divergence(a.trajectory, oracle.trajectory).final_latent_mse;

        cfg.method = ScaleMethod::CD;
        RunOutput b = run_experiment(model, cfg, &cd);
        mse_cd += trajectory_divergence(b.trajectory, oracle.trajectory).final_latent_mse;

        cfg.mode = ExecMode::Naive;
        cfg.rank = 0;
        cfg.method = ScaleMethod::Identity;
        RunOutput n = run_experiment(model, cfg, nullptr);
        mse_naive += trajectory_divergence(n.trajectory, oracle.trajectory).final_latent_mse;
    }
    std::ostringstream numbers;
    numbers.precision(4);
    numbers << std::scientific << "plain " << mse_plain / seeds << ", cd " << mse_cd / seeds
            << ", naive " << mse_naive / seeds;
    c.expect(mse_plain < mse_naive, "plain SVD not below naive (" + numbers.str() + ")");
    c.expect(mse_cd < mse_naive, "CD-SVD not below naive (" + numbers.str() + ")");
    report(8, "calibration beats naive on mean final-latent MSE (20 seeds)", c.pass,
           c.pass ? numbers.str() : c.detail.str());
}

// 9. Exact analytic-vs-ledger equality across the full mode/period/rank sweep.
void criterion_9() {
    Check c;
    ExperimentConfig base = accept_toy_config();
    ModelWeights model = init_weights(base.model, base.weight_seed);
    const ArchSpec arch = toy_arch(base.model);

    for (ExecMode mode : {ExecMode::NoCache, ExecMode::Naive, ExecMode::Calibrated}) {
        for (int p : {1, 2, 3}) {
            for (int r : {0, 16, 64}) {
                if (mode != ExecMode::Calibrated && r != 0) continue;
                ExperimentConfig cfg = base;
                cfg.mode = mode;
                cfg.period = p;
                cfg.rank = r;
                cfg.seed = 900 + p * 10 + r;
                CalibParams calib;
                if (mode == ExecMode::Calibrated) calib = plain_svd_calib(model, r);
                RunOutput out = run_experiment(
                    model, cfg, mode == ExecMode::Calibrated ? &calib : nullptr);
                const MacEstimate est =
                    estimate_macs_detail(arch, cfg.n_steps, mode, p, r);
                if (out.ledger.block_layer_total() != est.block_total)
                    c.expect(false, std::string(exec_mode_name(mode)) + " p" +
                                        std::to_string(p) + " r" + std::to_string(r) +
                                        ": ledger " +
                                        std::to_string(out.ledger.block_layer_total()) +
                                        " vs estimate " + std::to_string(est.block_total));
            }
        }
    }
    report(9, "ledger soundness (exact, p in {1,2,3} x r in {0,16,64})", c.pass,
           c.detail.str());
}

// 10. Byte-identical reports (minus wall time) and container round trip.
void criterion_10() {
    Check c;
    ExperimentConfig cfg = accept_toy_config();
    cfg.mode = ExecMode::Calibrated;
    cfg.rank = 16;
    cfg.seed = 42;
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);

    auto make_payload = [&]() {
        CalibParams calib = plain_svd_calib(model, 16);
        RunOutput run = run_experiment(model, cfg, &calib);
        RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);
        DivergenceReport div = trajectory_divergence(run.trajectory, oracle.trajectory);
        return report_payload_without_wall_time(run_report(cfg, run, &div));
    };
    c.expect(make_payload() == make_payload(), "report payloads differ between runs");

    const std::string bytes = serialize_tensors(model_to_tensors(model));
    const std::string again = serialize_tensors(
        model_to_tensors(model_from_tensors(deserialize_tensors(bytes))));
    c.expect(bytes == again, "weight container did not round-trip byte-identically");
    report(10, "determinism and I/O (byte-identical)", c.pass, c.detail.str());
}

} // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (g_failures != 0) {
        std::cout << g_failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all acceptance criteria passed\n";
    return 0;
}
