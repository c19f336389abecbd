#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "icc/divergence.hpp"
#include "icc/experiment.hpp"
#include "icc/ledger.hpp"

namespace icc {

using json = nlohmann::json;

constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Config <-> JSON (the embedded config makes every report re-runnable)
// ---------------------------------------------------------------------------

inline json config_to_json(const ExperimentConfig& c) {
    return json{{"model",
                 {{"depth", c.model.depth},
                  {"hidden", c.model.hidden},
                  {"heads", c.model.heads},
                  {"tokens", c.model.tokens},
                  {"mlp_ratio", c.model.mlp_ratio},
                  {"cond_classes", c.model.cond_classes}}},
                {"weight_seed", c.weight_seed},
                {"timesteps", c.timesteps},
                {"beta_start", c.beta_start},
                {"beta_end", c.beta_end},
                {"sampler", sampler_kind_name(c.sampler)},
                {"steps", c.n_steps},
                {"guidance_scale", c.guidance_scale},
                {"mode", exec_mode_name(c.mode)},
                {"period", c.period},
                {"rank", c.rank},
                {"method", scale_method_name(c.method)},
                {"calib_size", c.calib_size},
                {"calib_seed", c.calib_seed},
                {"seed", c.seed},
                {"cond", c.cond}};
}

inline SamplerKind sampler_kind_from_name(const std::string& s) {
    if (s == "ddpm") return SamplerKind::DDPM;
    if (s == "ddim") return SamplerKind::DDIM;
    throw std::invalid_argument("unknown sampler '" + s + "'");
}

inline ExecMode exec_mode_from_name(const std::string& s) {
    if (s == "nocache") return ExecMode::NoCache;
    if (s == "naive") return ExecMode::Naive;
    if (s == "calibrated") return ExecMode::Calibrated;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

inline ScaleMethod scale_method_from_name(const std::string& s) {
    if (s == "svd") return ScaleMethod::Identity;
    if (s == "ca-svd") return ScaleMethod::CA;
    if (s == "cd-svd") return ScaleMethod::CD;
    if (s == "cd-svd-i") return ScaleMethod::CDInputOnly;
    if (s == "cd-svd-o") return ScaleMethod::CDOutputOnly;
    throw std::invalid_argument("unknown calibration method '" + s + "'");
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    const json& m = j.at("model");
    c.model.depth = m.at("depth");
    c.model.hidden = m.at("hidden");
    c.model.heads = m.at("heads");
    c.model.tokens = m.at("tokens");
    c.model.mlp_ratio = m.at("mlp_ratio");
    c.model.cond_classes = m.at("cond_classes");
    c.weight_seed = j.at("weight_seed");
    c.timesteps = j.at("timesteps");
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.sampler = sampler_kind_from_name(j.at("sampler"));
    c.n_steps = j.at("steps");
    c.guidance_scale = j.at("guidance_scale");
    c.mode = exec_mode_from_name(j.at("mode"));
    c.period = j.at("period");
    c.rank = j.at("rank");
    c.method = scale_method_from_name(j.at("method"));
    c.calib_size = j.at("calib_size");
    c.calib_seed = j.at("calib_seed");
    c.seed = j.at("seed");
    c.cond = j.at("cond");
    return c;
}

// ---------------------------------------------------------------------------
// Run and bench reports
// ---------------------------------------------------------------------------

inline json ledger_to_json(const MacLedger& ledger) {
    return json{{"total", ledger.total()},
                {"block_layers", ledger.block_layer_total()},
                {"linear_full", ledger.total(MacKind::LinearFull)},
                {"linear_increment", ledger.total(MacKind::LinearIncrement)},
                {"attention_nonlinear", ledger.total(MacKind::AttentionNonlinear)},
                {"overhead", ledger.total(MacKind::Overhead)}};
}

inline json divergence_to_json(const DivergenceReport& d) {
    json steps = json::array();
    for (const StepDivergence& s : d.steps)
        steps.push_back(json{{"position", s.position},
                             {"t", s.t},
                             {"eps_mse", s.eps_mse},
                             {"eps_max_abs", s.eps_max_abs},
                             {"latent_mse", s.latent_mse},
                             {"latent_max_abs", s.latent_max_abs}});
    return json{{"per_step", steps},
                {"final_latent_mse", d.final_latent_mse},
                {"final_latent_max_abs", d.final_latent_max_abs}};
}

// Wall time sits in a dedicated key so consumers comparing payloads can drop
// it; every other field is reproducible from config + seeds.
inline json run_report(const ExperimentConfig& cfg, const RunOutput& out,
                       const DivergenceReport* divergence) {
    json j{{"schema_version", kReportSchemaVersion},
           {"kind", "sample"},
           {"config", config_to_json(cfg)},
           {"macs", ledger_to_json(out.ledger)},
           {"wall_time_s", out.wall_seconds}};
    if (divergence) j["divergence"] = divergence_to_json(*divergence);
    return j;
}

inline json bench_report(const ExperimentConfig& base, const std::vector<BenchRow>& rows,
                         double wall_seconds) {
    json jrows = json::array();
    for (const BenchRow& r : rows)
        jrows.push_back(json{{"mode", exec_mode_name(r.cell.mode)},
                             {"method", scale_method_name(r.cell.method)},
                             {"period", r.cell.period},
                             {"rank", r.cell.rank},
                             {"seed", r.seed},
                             {"mac_total", r.mac_total},
                             {"block_macs", r.block_macs},
                             {"final_latent_mse", r.final_latent_mse},
                             {"final_latent_max_abs", r.final_latent_max_abs},
                             {"mean_step_eps_mse", r.mean_step_eps_mse}});

    // aggregate over seeds per cell, keyed in row order
    json cells = json::array();
    std::vector<std::string> seen;
    for (const BenchRow& r : rows) {
        std::ostringstream key;
        key << exec_mode_name(r.cell.mode) << "/" << scale_method_name(r.cell.method) << "/p"
            << r.cell.period << "/r" << r.cell.rank;
        if (std::find(seen.begin(), seen.end(), key.str()) != seen.end()) continue;
        seen.push_back(key.str());
        double mse_sum = 0.0, maxabs_sum = 0.0;
        std::uint64_t macs = 0;
        int n = 0;
        for (const BenchRow& r2 : rows)
            if (r2.cell.mode == r.cell.mode && r2.cell.method == r.cell.method &&
                r2.cell.period == r.cell.period && r2.cell.rank == r.cell.rank) {
                mse_sum += r2.final_latent_mse;
                maxabs_sum += r2.final_latent_max_abs;
                macs = r2.mac_total;
                ++n;
            }
        cells.push_back(json{{"cell", key.str()},
                             {"mode", exec_mode_name(r.cell.mode)},
                             {"method", scale_method_name(r.cell.method)},
                             {"period", r.cell.period},
                             {"rank", r.cell.rank},
                             {"seeds", n},
                             {"mac_total", macs},
                             {"mean_final_latent_mse", mse_sum / n},
                             {"mean_final_latent_max_abs", maxabs_sum / n}});
    }

    return json{{"schema_version", kReportSchemaVersion},
                {"kind", "bench"},
                {"config", config_to_json(base)},
                {"cells", cells},
                {"rows", jrows},
                {"wall_time_s", wall_seconds}};
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "mode,method,period,rank,seed,mac_total,block_macs,final_latent_mse,"
           "final_latent_max_abs,mean_step_eps_mse\n";
    for (const BenchRow& r : rows) {
        std::ostringstream line;
        line.precision(17);
        line << exec_mode_name(r.cell.mode) << "," << scale_method_name(r.cell.method) << ","
             << r.cell.period << "," << r.cell.rank << "," << r.seed << "," << r.mac_total
             << "," << r.block_macs << "," << r.final_latent_mse << ","
             << r.final_latent_max_abs << "," << r.mean_step_eps_mse << "\n";
        out << line.str();
    }
    return out.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << content;
    if (!f) throw std::runtime_error("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Canonical serialization used everywhere a report is written to disk.
inline std::string report_to_string(const json& j) { return j.dump(2) + "\n"; }

// Byte-comparable payload: the report minus its wall-time field.
inline std::string report_payload_without_wall_time(json j) {
    j.erase("wall_time_s");
    return j.dump(2);
}

} // namespace icc
