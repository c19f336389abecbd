// Command-line surface of the increment-calibrated caching engine: model
// init, calibration, sampling, benchmark sweeps, analytic MAC estimates, and
// a built-in property verifier.

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icc/caching.hpp"
#include "icc/calibration.hpp"
#include "icc/container.hpp"
#include "icc/divergence.hpp"
#include "icc/experiment.hpp"
#include "icc/macmodel.hpp"
#include "icc/model.hpp"
#include "icc/report.hpp"
#include "icc/rng.hpp"
#include "icc/samplers.hpp"
#include "icc/schedule.hpp"
#include "icc/svd.hpp"

namespace {

using namespace icc;

std::string step_tag(const char* prefix, int position) {
    std::ostringstream out;
    out << prefix << ".step" << std::setw(3) << std::setfill('0') << position;
    return out.str();
}

std::string human_macs(std::uint64_t macs) {
    std::ostringstream out;
    out << macs;
    if (macs >= 1000000000000ull) {
        out << " (" << std::fixed << std::setprecision(3)
            << static_cast<double>(macs) / 1e12 << "T)";
    } else if (macs >= 1000000000ull) {
        out << " (" << std::fixed << std::setprecision(3)
            << static_cast<double>(macs) / 1e9 << "G)";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// init-model
// ---------------------------------------------------------------------------

struct InitModelArgs {
    std::string out;
    std::uint64_t seed = 0;
    ModelConfig model;
    bool f32 = false;
};

int cmd_init_model(const InitModelArgs& a) {
    a.model.validate();
    ModelWeights w = init_weights(a.model, a.seed);
    save_model(a.out, w, a.f32 ? Dtype::F32 : Dtype::F64);
    std::cout << "wrote " << a.out << " (depth " << a.model.depth << ", hidden "
              << a.model.hidden << ", seed " << a.seed << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateArgs {
    std::string weights;
    std::string out;
    std::string method = "svd";
    int rank = 0;
    int calib_size = 256;
    std::uint64_t calib_seed = 0;
    int timesteps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

int cmd_calibrate(const CalibrateArgs& a) {
    ModelWeights model = load_model(a.weights);
    ExperimentConfig cfg;
    cfg.model = model.config;
    cfg.timesteps = a.timesteps;
    cfg.beta_start = a.beta_start;
    cfg.beta_end = a.beta_end;
    cfg.calib_size = a.calib_size;
    cfg.calib_seed = a.calib_seed;
    CalibParams params =
        build_calib_params(model, cfg, scale_method_from_name(a.method), a.rank);
    save_calib(a.out, params);
    std::cout << "wrote " << a.out << " (" << a.method << ", rank " << a.rank << ", "
              << params.layers.size() << " layers)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string weights;
    std::string calib;
    std::string from_report;
    std::string report_path;
    std::string latents_path;
    bool divergence = false;
    ExperimentConfig cfg;
    std::string mode = "nocache";
    std::string sampler = "ddim";
};

int cmd_sample(SampleArgs& a) {
    if (!a.from_report.empty()) {
        const json j = json::parse(read_text_file(a.from_report));
        a.cfg = config_from_json(j.at("config"));
    } else {
        a.cfg.mode = exec_mode_from_name(a.mode);
        a.cfg.sampler = sampler_kind_from_name(a.sampler);
    }
    ModelWeights model = load_model(a.weights);
    a.cfg.model = model.config;
    a.cfg.validate();

    CalibParams calib;
    const CalibParams* calib_ptr = nullptr;
    if (a.cfg.mode == ExecMode::Calibrated) {
        if (a.calib.empty())
            throw std::invalid_argument("calibrated mode needs --calib FILE");
        calib = load_calib(a.calib, model.config);
        a.cfg.rank = calib.rank;
        a.cfg.method = calib.method;
        calib_ptr = &calib;
    }

    RunOutput out = run_experiment(model, a.cfg, calib_ptr);
    DivergenceReport div;
    bool have_div = false;
    if (a.divergence) {
        RunOutput oracle = run_experiment(model, oracle_config(a.cfg), nullptr);
        div = trajectory_divergence(out.trajectory, oracle.trajectory);
        have_div = true;
    }

    if (!a.latents_path.empty()) {
        std::vector<NamedTensor> tensors;
        for (std::size_t i = 0; i < out.trajectory.latents.size(); ++i) {
            tensors.push_back(NamedTensor::from_matrix(
                step_tag("latent", static_cast<int>(i) + 1), out.trajectory.latents[i]));
            tensors.push_back(NamedTensor::from_matrix(
                step_tag("eps_hat", static_cast<int>(i) + 1), out.trajectory.eps_hats[i]));
        }
        save_tensors(a.latents_path, tensors);
    }

    const json rep = run_report(a.cfg, out, have_div ? &div : nullptr);
    if (!a.report_path.empty()) write_text_file(a.report_path, report_to_string(rep));

    std::cout << "mode " << exec_mode_name(a.cfg.mode) << ", " << a.cfg.n_steps
              << " steps, MACs " << human_macs(out.ledger.total()) << "\n";
    if (have_div)
        std::cout << "final latent mse vs oracle: " << std::scientific
                  << div.final_latent_mse << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string weights;
    std::string modes = "nocache,naive,calibrated";
    std::string periods = "2";
    std::string ranks = "16";
    std::string method = "svd";
    int seeds = 8;
    std::uint64_t seed_base = 1000;
    std::string report_path;
    std::string csv_path;
    ExperimentConfig cfg;
    std::string sampler = "ddim";
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) parts.push_back(item);
    return parts;
}

int cmd_bench(BenchArgs& a) {
    ModelWeights model = load_model(a.weights);
    a.cfg.model = model.config;
    a.cfg.sampler = sampler_kind_from_name(a.sampler);
    a.cfg.method = scale_method_from_name(a.method);

    std::vector<ExecMode> modes;
    for (const std::string& m : split_list(a.modes)) modes.push_back(exec_mode_from_name(m));
    std::vector<int> periods, ranks;
    for (const std::string& p : split_list(a.periods)) periods.push_back(std::stoi(p));
    for (const std::string& r : split_list(a.ranks)) ranks.push_back(std::stoi(r));
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < a.seeds; ++i) seeds.push_back(a.seed_base + i);

    const std::vector<BenchCell> cells =
        expand_bench_cells(modes, periods, ranks, a.cfg.method);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<BenchRow> rows = run_bench(model, a.cfg, cells, seeds);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const json rep = bench_report(a.cfg, rows, wall);
    if (!a.report_path.empty()) write_text_file(a.report_path, report_to_string(rep));
    if (!a.csv_path.empty()) write_text_file(a.csv_path, bench_csv(rows));

    std::cout << std::left << std::setw(34) << "cell" << std::right << std::setw(16)
              << "macs" << std::setw(26) << "mean final latent mse" << "\n";
    for (const json& c : rep.at("cells"))
        std::cout << std::left << std::setw(34) << c.at("cell").get<std::string>()
                  << std::right << std::setw(16) << c.at("mac_total").get<std::uint64_t>()
                  << std::setw(26) << std::scientific << std::setprecision(6)
                  << c.at("mean_final_latent_mse").get<double>() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateArgs {
    std::string preset;
    ArchSpec arch;
    bool cfg_flag = false;
    int steps = 40;
    std::string mode = "nocache";
    int period = 2;
    int rank = 0;
};

int cmd_estimate(EstimateArgs& a) {
    ArchSpec arch;
    if (a.preset == "dit-xl2") {
        arch = dit_xl2_arch();
    } else if (a.preset.empty()) {
        arch = a.arch;
        arch.cfg_enabled = a.cfg_flag;
        arch.validate();
    } else {
        throw std::invalid_argument("unknown preset '" + a.preset + "' (try dit-xl2)");
    }
    const ExecMode mode = exec_mode_from_name(a.mode);
    const MacEstimate est = estimate_macs_detail(arch, a.steps, mode, a.period, a.rank);
    std::cout << "arch: depth " << arch.depth << ", hidden " << arch.hidden << ", tokens "
              << arch.tokens << ", cfg " << (arch.cfg_enabled ? "on" : "off") << "\n"
              << "run: " << a.steps << " steps, mode " << a.mode;
    if (mode != ExecMode::NoCache) std::cout << ", period " << a.period;
    if (mode == ExecMode::Calibrated) std::cout << ", rank " << a.rank;
    std::cout << "\n"
              << "gather steps: " << est.gather_steps
              << ", scatter steps: " << est.scatter_steps << "\n"
              << "block MACs per full forward: " << human_macs(est.gather_forward) << "\n";
    if (mode == ExecMode::Calibrated)
        std::cout << "block MACs per calibrated forward: " << human_macs(est.scatter_forward)
                  << "\n";
    std::cout << "overhead per forward: " << human_macs(arch.overhead_macs_per_forward)
              << "\n"
              << "total: " << human_macs(est.total) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify() {
    int failures = 0;
    auto check = [&](const char* name, auto&& fn) {
        try {
            fn();
            std::cout << "ok   " << name << "\n";
        } catch (const std::exception& e) {
            std::cout << "FAIL " << name << ": " << e.what() << "\n";
            ++failures;
        }
    };
    auto expect = [](bool cond, const std::string& msg) {
        if (!cond) throw std::runtime_error(msg);
    };

    check("svd reconstruction and orthonormality", [&]() {
        Rng rng(1);
        Matrix2D w = random_gauss(64, 48, rng);
        SvdFactors f = thin_svd(w);
        expect(frobenius_norm(sub(f.reconstruct(), w)) / frobenius_norm(w) < 1e-8,
               "reconstruction off");
        for (std::size_t i = 0; i < f.sigma.size(); ++i) {
            double dot = 0.0;
            for (std::size_t r = 0; r < f.u.rows(); ++r) dot += f.u(r, i) * f.u(r, i);
            expect(std::abs(dot - 1.0) < 1e-9, "u not normalized");
        }
    });

    check("truncation error matches the sigma tail at every rank", [&]() {
        Rng rng(2);
        Matrix2D w = random_gauss(40, 28, rng);
        SvdFactors f = thin_svd(w);
        double prev = 1e300;
        for (std::size_t r = 0; r <= f.sigma.size(); ++r) {
            auto [wa, wb] = truncate_factors(f, r);
            const double err = frobenius_norm(sub(w, low_rank_product(wa, wb)));
            double tail = 0.0;
            for (std::size_t i = r; i < f.sigma.size(); ++i) tail += f.sigma[i] * f.sigma[i];
            expect(std::abs(err - std::sqrt(tail)) < 1e-8 * frobenius_norm(w),
                   "tail mismatch at rank " + std::to_string(r));
            expect(err <= prev + 1e-12, "error not monotone");
            prev = err;
        }
    });

    check("cache plans gather first and complement exactly", [&]() {
        for (int n = 1; n <= 10; ++n)
            for (int p = 1; p <= 4; ++p) {
                CachePlan plan = fora_plan(n, 8, p);
                for (int l = 0; l < 8; ++l) {
                    bool seen = false;
                    for (int i = 1; i <= n; ++i) {
                        expect(plan.gather_at(i, l) != plan.scatter_at(i, l),
                               "complement violated");
                        if (plan.gather_at(i, l)) seen = true;
                        if (plan.scatter_at(i, l)) expect(seen, "scatter before gather");
                    }
                }
            }
    });

    check("analytic MAC model equals the measured ledger", [&]() {
        ModelConfig mc;
        mc.depth = 2;
        mc.hidden = 32;
        mc.heads = 4;
        mc.tokens = 16;
        mc.cond_classes = 10;
        ModelWeights model = init_weights(mc, 3);
        ExperimentConfig cfg;
        cfg.model = mc;
        cfg.timesteps = 20;
        cfg.n_steps = 6;
        const ArchSpec arch = toy_arch(mc);
        for (ExecMode mode : {ExecMode::NoCache, ExecMode::Naive, ExecMode::Calibrated}) {
            cfg.mode = mode;
            cfg.period = 2;
            cfg.rank = mode == ExecMode::Calibrated ? 8 : 0;
            CalibParams calib;
            if (mode == ExecMode::Calibrated) calib = plain_svd_calib(model, 8);
            RunOutput out = run_experiment(model, cfg,
                                           mode == ExecMode::Calibrated ? &calib : nullptr);
            const MacEstimate est =
                estimate_macs_detail(arch, cfg.n_steps, mode, cfg.period, cfg.rank);
            expect(out.ledger.block_layer_total() == est.block_total,
                   std::string("ledger mismatch in ") + exec_mode_name(mode));
        }
    });

    check("container round trip is byte-identical", [&]() {
        Rng rng(4);
        std::vector<NamedTensor> ts{NamedTensor::from_matrix("w", random_gauss(5, 6, rng)),
                                    NamedTensor::from_vector("b", {1.0, -2.0, 3.5})};
        const std::string bytes = serialize_tensors(ts);
        expect(serialize_tensors(deserialize_tensors(bytes)) == bytes, "bytes changed");
    });

    check("identity scales reproduce plain SVD factors", [&]() {
        ModelConfig mc;
        mc.depth = 1;
        mc.hidden = 24;
        mc.heads = 4;
        mc.tokens = 8;
        mc.cond_classes = 4;
        ModelWeights model = init_weights(mc, 5);
        CalibParams plain = plain_svd_calib(model, 6);
        CalibParams ca = channel_aware_calib(model, identity_scales(mc), 6);
        for (int f = 0; f < mc.n_layers(); ++f) {
            Matrix2D p1 = low_rank_product(plain.layers[f].a, plain.layers[f].b);
            Matrix2D p2 = low_rank_product(ca.layers[f].a, ca.layers[f].b);
            expect(frobenius_norm(sub(p1, p2)) < 1e-9 * std::max(1.0, frobenius_norm(p1)),
                   "factor products differ");
        }
    });

    check("full-rank calibration matches the oracle trajectory", [&]() {
        ModelConfig mc;
        mc.depth = 2;
        mc.hidden = 32;
        mc.heads = 4;
        mc.tokens = 16;
        mc.cond_classes = 10;
        ModelWeights model = init_weights(mc, 6);
        ExperimentConfig cfg;
        cfg.model = mc;
        cfg.timesteps = 30;
        cfg.n_steps = 8;
        cfg.mode = ExecMode::Calibrated;
        cfg.period = 2;
        cfg.rank = 32;
        CalibParams calib = plain_svd_calib(model, 32);
        RunOutput run = run_experiment(model, cfg, &calib);
        RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);
        expect(max_abs_diff(run.trajectory.latents.back(),
                            oracle.trajectory.latents.back()) < 1e-8,
               "trajectories diverged");
    });

    check("step indices stay strictly decreasing", [&]() {
        Rng rng(7);
        for (int c = 0; c < 50; ++c) {
            const int T = 2 + static_cast<int>(rng.below(500));
            const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
            std::vector<int> idx = make_step_indices(T, n);
            for (std::size_t i = 1; i < idx.size(); ++i)
                expect(idx[i] < idx[i - 1], "not strictly decreasing");
            expect(idx.back() == 1, "must end at 1");
        }
    });

    std::cout << (failures == 0 ? "all checks passed\n"
                                : std::to_string(failures) + " check(s) failed\n");
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"increment-calibrated caching engine for a toy diffusion transformer"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an INI key=value file");

    InitModelArgs init_args;
    CLI::App* init = app.add_subcommand("init-model", "draw and save toy model weights");
    init->add_option("--out", init_args.out, "output weight container")->required();
    init->add_option("--seed", init_args.seed, "weight seed");
    init->add_option("--depth", init_args.model.depth, "transformer blocks");
    init->add_option("--hidden", init_args.model.hidden, "channel width");
    init->add_option("--heads", init_args.model.heads, "attention heads");
    init->add_option("--tokens", init_args.model.tokens, "tokens per sample");
    init->add_option("--mlp-ratio", init_args.model.mlp_ratio, "FFN expansion");
    init->add_option("--classes", init_args.model.cond_classes, "conditioning classes");
    init->add_flag("--f32", init_args.f32, "store weights as 32-bit floats");

    CalibrateArgs cal_args;
    CLI::App* cal = app.add_subcommand("calibrate", "generate calibration parameters");
    cal->add_option("--weights", cal_args.weights, "weight container")->required();
    cal->add_option("--out", cal_args.out, "output calibration container")->required();
    cal->add_option("--method", cal_args.method,
                    "svd | ca-svd | cd-svd | cd-svd-i | cd-svd-o");
    cal->add_option("--rank", cal_args.rank, "unified rank r")->required();
    cal->add_option("--calib-size", cal_args.calib_size, "calibration set size");
    cal->add_option("--calib-seed", cal_args.calib_seed, "calibration seed");
    cal->add_option("--timesteps", cal_args.timesteps, "diffusion timesteps T");
    cal->add_option("--beta-start", cal_args.beta_start, "schedule start");
    cal->add_option("--beta-end", cal_args.beta_end, "schedule end");

    SampleArgs sample_args;
    CLI::App* sample = app.add_subcommand("sample", "run one reverse trajectory");
    sample->add_option("--weights", sample_args.weights, "weight container")->required();
    sample->add_option("--calib", sample_args.calib, "calibration container");
    sample->add_option("--mode", sample_args.mode, "nocache | naive | calibrated");
    sample->add_option("--sampler", sample_args.sampler, "ddim | ddpm");
    sample->add_option("--steps", sample_args.cfg.n_steps, "sampler steps");
    sample->add_option("--period", sample_args.cfg.period, "caching period p");
    sample->add_option("--timesteps", sample_args.cfg.timesteps, "diffusion timesteps T");
    sample->add_option("--beta-start", sample_args.cfg.beta_start, "schedule start");
    sample->add_option("--beta-end", sample_args.cfg.beta_end, "schedule end");
    sample->add_option("--seed", sample_args.cfg.seed, "run seed");
    sample->add_option("--cond", sample_args.cfg.cond, "class index (-1 draws from seed)");
    sample->add_option("--guidance", sample_args.cfg.guidance_scale,
                       "classifier-free guidance scale");
    sample->add_option("--report", sample_args.report_path, "write JSON report here");
    sample->add_option("--latents", sample_args.latents_path,
                       "write per-step latents container here");
    sample->add_flag("--divergence", sample_args.divergence,
                     "also run the no-caching oracle and report divergence");
    sample->add_option("--from-report", sample_args.from_report,
                       "re-run the embedded config of an existing report");

    BenchArgs bench_args;
    CLI::App* bench = app.add_subcommand("bench", "sweep modes/ranks/periods over seeds");
    bench->add_option("--weights", bench_args.weights, "weight container")->required();
    bench->add_option("--modes", bench_args.modes, "comma list of modes");
    bench->add_option("--periods", bench_args.periods, "comma list of periods");
    bench->add_option("--ranks", bench_args.ranks, "comma list of ranks");
    bench->add_option("--method", bench_args.method, "calibration method");
    bench->add_option("--seeds", bench_args.seeds, "number of seeds");
    bench->add_option("--seed-base", bench_args.seed_base, "first seed value");
    bench->add_option("--sampler", bench_args.sampler, "ddim | ddpm");
    bench->add_option("--steps", bench_args.cfg.n_steps, "sampler steps");
    bench->add_option("--timesteps", bench_args.cfg.timesteps, "diffusion timesteps T");
    bench->add_option("--beta-start", bench_args.cfg.beta_start, "schedule start");
    bench->add_option("--beta-end", bench_args.cfg.beta_end, "schedule end");
    bench->add_option("--guidance", bench_args.cfg.guidance_scale, "guidance scale");
    bench->add_option("--calib-size", bench_args.cfg.calib_size, "calibration set size");
    bench->add_option("--calib-seed", bench_args.cfg.calib_seed, "calibration seed");
    bench->add_option("--report", bench_args.report_path, "write JSON report here");
    bench->add_option("--csv", bench_args.csv_path, "write per-row CSV here");

    EstimateArgs est_args;
    CLI::App* est = app.add_subcommand("estimate", "analytic MAC estimate from an arch spec");
    est->add_option("--preset", est_args.preset, "named architecture (dit-xl2)");
    est->add_option("--depth", est_args.arch.depth, "blocks");
    est->add_option("--hidden", est_args.arch.hidden, "channel width");
    est->add_option("--heads", est_args.arch.heads, "attention heads");
    est->add_option("--tokens", est_args.arch.tokens, "tokens");
    est->add_option("--mlp-ratio", est_args.arch.mlp_ratio, "FFN expansion");
    est->add_option("--overhead", est_args.arch.overhead_macs_per_forward,
                    "non-block MACs per forward");
    est->add_flag("--cfg", est_args.cfg_flag, "classifier-free guidance batch doubling");
    est->add_option("--steps", est_args.steps, "sampler steps")->required();
    est->add_option("--mode", est_args.mode, "nocache | naive | calibrated");
    est->add_option("--period", est_args.period, "caching period p");
    est->add_option("--rank", est_args.rank, "calibration rank r");

    CLI::App* verify = app.add_subcommand("verify", "run the built-in property suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (init->parsed()) return cmd_init_model(init_args);
        if (cal->parsed()) return cmd_calibrate(cal_args);
        if (sample->parsed()) return cmd_sample(sample_args);
        if (bench->parsed()) return cmd_bench(bench_args);
        if (est->parsed()) return cmd_estimate(est_args);
        if (verify->parsed()) return cmd_verify();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
