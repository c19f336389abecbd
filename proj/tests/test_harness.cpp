#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "icc/divergence.hpp"
#include "icc/experiment.hpp"
#include "icc/report.hpp"

using namespace icc;

namespace {

ExperimentConfig base_config() {
    ExperimentConfig c;
    c.model.depth = 2;
    c.model.hidden = 32;
    c.model.heads = 4;
    c.model.tokens = 16;
    c.model.cond_classes = 10;
    c.weight_seed = 21;
    c.timesteps = 50;
    c.n_steps = 10;
    c.calib_size = 4;
    c.calib_seed = 9;
    c.seed = 1;
    return c;
}

} // namespace

TEST_CASE("divergence of the full-rank calibrated run is at rounding level") {
    ExperimentConfig cfg = base_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    CalibParams calib = plain_svd_calib(model, 32);

    cfg.mode = ExecMode::Calibrated;
    cfg.period = 2;
    cfg.rank = 32;
    RunOutput run = run_experiment(model, cfg, &calib);
    RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);
    DivergenceReport div = trajectory_divergence(run.trajectory, oracle.trajectory);
    for (const StepDivergence& s : div.steps) {
        REQUIRE(s.latent_max_abs < 1e-12);
        REQUIRE(s.eps_max_abs < 1e-12);
    }
}

TEST_CASE("rank-zero calibrated divergence equals naive divergence bit for bit") {
    ExperimentConfig cfg = base_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    CalibParams calib0 = plain_svd_calib(model, 0);

    cfg.mode = ExecMode::Calibrated;
    cfg.rank = 0;
    cfg.period = 2;
    RunOutput cal = run_experiment(model, cfg, &calib0);
    cfg.mode = ExecMode::Naive;
    cfg.rank = 0;
    RunOutput naive = run_experiment(model, cfg, nullptr);
    RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);

    DivergenceReport a = trajectory_divergence(cal.trajectory, oracle.trajectory);
    DivergenceReport b = trajectory_divergence(naive.trajectory, oracle.trajectory);
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        REQUIRE(a.steps[i].latent_mse == b.steps[i].latent_mse);
        REQUIRE(a.steps[i].eps_max_abs == b.steps[i].eps_max_abs);
    }
}

TEST_CASE("divergence rejects mismatched trajectories") {
    ExperimentConfig cfg = base_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    RunOutput a = run_experiment(model, cfg, nullptr);
    ExperimentConfig other = cfg;
    other.n_steps = 5;
    RunOutput b = run_experiment(model, other, nullptr);
    REQUIRE_THROWS_AS(trajectory_divergence(a.trajectory, b.trajectory),
                      std::invalid_argument);
}

TEST_CASE("calibration beats naive on mean final-latent error (quick check)") {
    ExperimentConfig cfg = base_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    CalibParams calib = plain_svd_calib(model, 8); // 25% of min dimension

    double mse_cal = 0.0, mse_naive = 0.0;
    const int seeds = 8;
    for (int s = 0; s < seeds; ++s) {
        cfg.seed = 100 + s;
        cfg.mode = ExecMode::Calibrated;
        cfg.rank = 8;
        cfg.period = 2;
        RunOutput cal = run_experiment(model, cfg, &calib);
        cfg.mode = ExecMode::Naive;
        RunOutput naive = run_experiment(model, cfg, nullptr);
        RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);
        mse_cal += trajectory_divergence(cal.trajectory, oracle.trajectory).final_latent_mse;
        mse_naive +=
            trajectory_divergence(naive.trajectory, oracle.trajectory).final_latent_mse;
    }
    REQUIRE(mse_cal / seeds < mse_naive / seeds);
}

TEST_CASE("guided runs double the ledger and stay deterministic") {
    ExperimentConfig cfg = base_config();
    cfg.guidance_scale = 1.5;
    cfg.cond = 3;
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    RunOutput a = run_experiment(model, cfg, nullptr);
    RunOutput b = run_experiment(model, cfg, nullptr);
    REQUIRE(a.trajectory.latents.back() == b.trajectory.latents.back());

    ExperimentConfig plain = cfg;
    plain.guidance_scale = 1.0;
    RunOutput c = run_experiment(model, plain, nullptr);
    REQUIRE(a.ledger.total() == 2 * c.ledger.total());
    REQUIRE(max_abs_diff(a.trajectory.latents.back(), c.trajectory.latents.back()) > 0.0);
}

TEST_CASE("experiment config json round trip") {
    ExperimentConfig cfg = base_config();
    cfg.mode = ExecMode::Calibrated;
    cfg.method = ScaleMethod::CD;
    cfg.rank = 12;
    cfg.guidance_scale = 1.5;
    cfg.sampler = SamplerKind::DDPM;
    cfg.cond = 7;
    ExperimentConfig back = config_from_json(config_to_json(cfg));
    REQUIRE(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("reports are byte-identical apart from wall time") {
    ExperimentConfig cfg = base_config();
    cfg.mode = ExecMode::Naive;
    cfg.period = 2;
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);

    auto make_report = [&]() {
        RunOutput run = run_experiment(model, cfg, nullptr);
        RunOutput oracle = run_experiment(model, oracle_config(cfg), nullptr);
        DivergenceReport div = trajectory_divergence(run.trajectory, oracle.trajectory);
        return run_report(cfg, run, &div);
    };
    const json a = make_report();
    const json b = make_report();
    REQUIRE(report_payload_without_wall_time(a) == report_payload_without_wall_time(b));
    REQUIRE(a.at("macs").at("total").get<std::uint64_t>() > 0);
    REQUIRE(a.at("divergence").at("final_latent_mse").get<double>() > 0.0);
}

TEST_CASE("bench rows are independent of the thread count") {
    ExperimentConfig cfg = base_config();
    cfg.n_steps = 6;
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    const std::vector<BenchCell> cells = expand_bench_cells(
        {ExecMode::NoCache, ExecMode::Naive, ExecMode::Calibrated}, {2, 3}, {0, 8},
        ScaleMethod::Identity);
    REQUIRE(cells.size() == 1 + 2 + 4);
    const std::vector<std::uint64_t> seeds{11, 12, 13};

    setenv("ICC_THREADS", "1", 1);
    std::vector<BenchRow> serial = run_bench(model, cfg, cells, seeds);
    setenv("ICC_THREADS", "4", 1);
    std::vector<BenchRow> parallel = run_bench(model, cfg, cells, seeds);
    unsetenv("ICC_THREADS");

    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        REQUIRE(serial[i].final_latent_mse == parallel[i].final_latent_mse);
        REQUIRE(serial[i].mac_total == parallel[i].mac_total);
        REQUIRE(serial[i].seed == parallel[i].seed);
    }

    const std::string csv = bench_csv(serial);
    REQUIRE(csv.find("mode,method,period,rank,seed") == 0);
    // header + one line per row
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') ==
            static_cast<long>(serial.size()) + 1);

    const json rep = bench_report(cfg, serial, 0.0);
    REQUIRE(rep.at("cells").size() == cells.size());
    REQUIRE(rep.at("rows").size() == serial.size());

    // a second sweep from scratch produces the identical payload
    const json rep2 = bench_report(cfg, run_bench(model, cfg, cells, seeds), 123.0);
    REQUIRE(report_payload_without_wall_time(rep) == report_payload_without_wall_time(rep2));
}

TEST_CASE("nocache runs ignore period and the oracle equals itself") {
    ExperimentConfig cfg = base_config();
    ModelWeights model = init_weights(cfg.model, cfg.weight_seed);
    RunOutput a = run_experiment(model, cfg, nullptr);
    DivergenceReport self = trajectory_divergence(a.trajectory, a.trajectory);
    REQUIRE(self.final_latent_mse == 0.0);
    REQUIRE(self.final_latent_max_abs == 0.0);
}
