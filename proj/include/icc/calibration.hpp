#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icc/matrix.hpp"
#include "icc/model.hpp"
#include "icc/rng.hpp"
#include "icc/samplers.hpp"
#include "icc/schedule.hpp"
#include "icc/svd.hpp"

namespace icc {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

enum class ScaleMethod : int { Identity = 0, CA = 1, CD = 2, CDInputOnly = 3, CDOutputOnly = 4 };

inline const char* scale_method_name(ScaleMethod m) {
    switch (m) {
    case ScaleMethod::Identity: return "svd";
    case ScaleMethod::CA: return "ca-svd";
    case ScaleMethod::CD: return "cd-svd";
    case ScaleMethod::CDInputOnly: return "cd-svd-i";
    case ScaleMethod::CDOutputOnly: return "cd-svd-o";
    }
    return "?";
}

// Per-layer diagonal channel scales. Entries are floored at 1e-6 so the
// inverse applied during rescaling is always safe.
struct ScalePair {
    std::vector<double> input_scale;  // length C_i
    std::vector<double> output_scale; // length C_o
    ScaleMethod method = ScaleMethod::Identity;
};

constexpr double kScaleFloor = 1e-6;

// Rank-r factor pair; product a*b (C_o x r)(r x C_i) approximates the layer
// weight. r = 0 stands for the zero matrix.
struct LowRankFactors {
    Matrix2D a;
    Matrix2D b;
};

struct CalibParams {
    int rank = 0;
    ScaleMethod method = ScaleMethod::Identity;
    std::vector<LowRankFactors> layers; // indexed by LayerId::flat()

    const LowRankFactors& at(const LayerId& id) const { return layers[id.flat()]; }

    void validate(const ModelConfig& cfg) const {
        if (static_cast<int>(layers.size()) != cfg.n_layers())
            throw std::invalid_argument("calibration: expected " +
                                        std::to_string(cfg.n_layers()) + " layers, have " +
                                        std::to_string(layers.size()));
        for (int f = 0; f < cfg.n_layers(); ++f) {
            const LayerId id = LayerId::from_flat(f);
            auto [co, ci] = cfg.layer_shape(id.slot);
            const LowRankFactors& lf = layers[f];
            if (static_cast<int>(lf.a.rows()) != co || static_cast<int>(lf.b.cols()) != ci ||
                lf.a.cols() != lf.b.rows() || static_cast<int>(lf.a.cols()) != rank)
                throw std::invalid_argument("calibration: factor shapes wrong at " + id.name());
            if (!lf.a.all_finite() || !lf.b.all_finite())
                throw std::invalid_argument("calibration: non-finite factors at " + id.name());
        }
    }
};

// Clean samples used to probe activation statistics; synthetic standard
// normals at desk scale.
struct CalibSet {
    std::vector<Matrix2D> samples;
    std::uint64_t seed = 0;
};

inline CalibSet make_calib_set(const ModelConfig& cfg, int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("calibration set: need at least one sample");
    CalibSet set;
    set.seed = seed;
    Rng rng(seed);
    set.samples.reserve(count);
    for (int i = 0; i < count; ++i)
        set.samples.push_back(random_gauss(cfg.tokens, cfg.hidden, rng));
    return set;
}

// ---------------------------------------------------------------------------
// Scale estimation
// ---------------------------------------------------------------------------

// Running per-channel mean of absolute activations (or activation deltas),
// averaged over tokens within a tap and over taps in arrival order.
class ScaleAccumulator {
public:
    explicit ScaleAccumulator(const ModelConfig& cfg) : cfg_(cfg) {
        in_sum_.resize(cfg.n_layers());
        out_sum_.resize(cfg.n_layers());
        for (int f = 0; f < cfg.n_layers(); ++f) {
            auto [co, ci] = cfg.layer_shape(LayerId::from_flat(f).slot);
            in_sum_[f].assign(ci, 0.0);
            out_sum_[f].assign(co, 0.0);
        }
    }

    // channel-activation statistics from one tapped forward
    void add_activations(const TapRecord& taps) {
        for (int f = 0; f < cfg_.n_layers(); ++f) {
            const LayerId id = LayerId::from_flat(f);
            if (!taps.has(id))
                throw std::invalid_argument("scale accumulation: missing tap at " + id.name());
            const auto& e = taps.at(id);
            accumulate_mean_abs(in_sum_[f], e.input);
            accumulate_mean_abs(out_sum_[f], e.output);
        }
        ++count_;
    }

    // channel-delta statistics between two tapped forwards
    void add_deltas(const TapRecord& now, const TapRecord& prev) {
        for (int f = 0; f < cfg_.n_layers(); ++f) {
            const LayerId id = LayerId::from_flat(f);
            if (!now.has(id) || !prev.has(id))
                throw std::invalid_argument("scale accumulation: missing tap at " + id.name());
            accumulate_mean_abs_diff(in_sum_[f], now.at(id).input, prev.at(id).input);
            accumulate_mean_abs_diff(out_sum_[f], now.at(id).output, prev.at(id).output);
        }
        ++count_;
    }

    std::vector<ScalePair> finish(ScaleMethod method) const {
        if (count_ == 0) throw std::logic_error("scale accumulation: nothing accumulated");
        std::vector<ScalePair> scales(cfg_.n_layers());
        for (int f = 0; f < cfg_.n_layers(); ++f) {
            ScalePair& p = scales[f];
            p.method = method;
            p.input_scale = averaged(in_sum_[f]);
            p.output_scale = averaged(out_sum_[f]);
        }
        return scales;
    }

private:
    void accumulate_mean_abs(std::vector<double>& sum, const Matrix2D& m) {
        const double inv_tokens = 1.0 / static_cast<double>(m.rows());
        for (std::size_t c = 0; c < m.cols(); ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < m.rows(); ++i) s += std::abs(m(i, c));
            sum[c] += s * inv_tokens;
        }
    }
    void accumulate_mean_abs_diff(std::vector<double>& sum, const Matrix2D& now,
                                  const Matrix2D& prev) {
        const double inv_tokens = 1.0 / static_cast<double>(now.rows());
        for (std::size_t c = 0; c < now.cols(); ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < now.rows(); ++i) s += std::abs(now(i, c) - prev(i, c));
            sum[c] += s * inv_tokens;
        }
    }
    std::vector<double> averaged(const std::vector<double>& sum) const {
        std::vector<double> out(sum.size());
        const double inv = 1.0 / static_cast<double>(count_);
        for (std::size_t i = 0; i < sum.size(); ++i) {
            const double v = sum[i] * inv;
            out[i] = (std::isfinite(v) && v > kScaleFloor) ? v : kScaleFloor;
        }
        return out;
    }

    ModelConfig cfg_;
    std::vector<std::vector<double>> in_sum_, out_sum_;
    long count_ = 0;
};

// Channel-activation statistics: for each clean sample draw t ~ U[1,T], noise
// it, run one full tapped forward, and accumulate mean absolute activations
// per channel. Draw order per sample: t, class, noise elements.
inline std::vector<ScalePair> ca_svd_scales(const ModelWeights& model, const CalibSet& set,
                                            const NoiseSchedule& sched, Rng& rng) {
    if (set.samples.empty()) throw std::invalid_argument("ca_svd_scales: empty calibration set");
    ScaleAccumulator acc(model.config);
    for (const Matrix2D& z0 : set.samples) {
        const int t = 1 + static_cast<int>(rng.below(sched.timesteps));
        const int cond = static_cast<int>(rng.below(model.config.cond_classes));
        Matrix2D eps = random_gauss(z0.rows(), z0.cols(), rng);
        Matrix2D z_t = forward_noising(z0, t, eps, sched);
        auto [eps_hat, taps] = forward_with_taps(model, z_t, t, cond);
        acc.add_activations(taps);
    }
    return acc.finish(ScaleMethod::CA);
}

// Channel-delta statistics: noise each sample to t ~ U[2,T], take one
// deterministic DDIM step, and accumulate per-channel mean absolute
// differences between the two steps' layer inputs and outputs.
inline std::vector<ScalePair> cd_svd_scales(const ModelWeights& model, const CalibSet& set,
                                            const NoiseSchedule& sched, Rng& rng) {
    if (sched.timesteps < 2) throw std::invalid_argument("cd_svd_scales: need T >= 2");
    if (set.samples.empty()) throw std::invalid_argument("cd_svd_scales: empty calibration set");
    ScaleAccumulator acc(model.config);
    for (const Matrix2D& z0 : set.samples) {
        const int t = 2 + static_cast<int>(rng.below(sched.timesteps - 1));
        const int cond = static_cast<int>(rng.below(model.config.cond_classes));
        Matrix2D eps = random_gauss(z0.rows(), z0.cols(), rng);
        Matrix2D z_t = forward_noising(z0, t, eps, sched);
        auto [eps_hat, taps_t] = forward_with_taps(model, z_t, t, cond);
        Matrix2D z_prev = ddim_step(z_t, eps_hat, t, t - 1, sched);
        auto [eps_hat2, taps_prev] = forward_with_taps(model, z_prev, t - 1, cond);
        acc.add_deltas(taps_prev, taps_t);
    }
    return acc.finish(ScaleMethod::CD);
}

enum class ScaleReduction { InputOnly, OutputOnly };

// Ablation variants: drop one side of the scaling by resetting it to ones.
inline ScalePair reduced_variant(const ScalePair& scales, ScaleReduction which) {
    ScalePair out = scales;
    if (which == ScaleReduction::InputOnly) {
        out.output_scale.assign(out.output_scale.size(), 1.0);
        out.method = ScaleMethod::CDInputOnly;
    } else {
        out.input_scale.assign(out.input_scale.size(), 1.0);
        out.method = ScaleMethod::CDOutputOnly;
    }
    return out;
}

inline std::vector<ScalePair> reduced_variants(const std::vector<ScalePair>& scales,
                                               ScaleReduction which) {
    std::vector<ScalePair> out;
    out.reserve(scales.size());
    for (const ScalePair& p : scales) out.push_back(reduced_variant(p, which));
    return out;
}

inline std::vector<ScalePair> identity_scales(const ModelConfig& cfg) {
    std::vector<ScalePair> scales(cfg.n_layers());
    for (int f = 0; f < cfg.n_layers(); ++f) {
        auto [co, ci] = cfg.layer_shape(LayerId::from_flat(f).slot);
        scales[f].input_scale.assign(ci, 1.0);
        scales[f].output_scale.assign(co, 1.0);
        scales[f].method = ScaleMethod::Identity;
    }
    return scales;
}

// ---------------------------------------------------------------------------
// Calibration parameter generation
// ---------------------------------------------------------------------------

namespace detail {

inline void check_rank(const ModelConfig& cfg, const LayerId& id, int rank) {
    auto [co, ci] = cfg.layer_shape(id.slot);
    const int md = std::min(co, ci);
    if (rank < 0 || rank > md)
        throw std::invalid_argument("calibration: rank " + std::to_string(rank) +
                                    " out of range for " + id.name() + " (min dimension " +
                                    std::to_string(md) + ")");
}

} // namespace detail

// Truncated SVD of the raw weights, no channel scaling.
inline CalibParams plain_svd_calib(const ModelWeights& model, int rank) {
    const ModelConfig& cfg = model.config;
    CalibParams params;
    params.rank = rank;
    params.method = ScaleMethod::Identity;
    params.layers.resize(cfg.n_layers());
    for (int f = 0; f < cfg.n_layers(); ++f) {
        const LayerId id = LayerId::from_flat(f);
        detail::check_rank(cfg, id, rank);
        auto [wa, wb] = truncate_factors(thin_svd(model.weight(id)), rank);
        params.layers[f] = LowRankFactors{std::move(wa), std::move(wb)};
    }
    return params;
}

// Scale one weight to W' = diag(s_o) W diag(s_i), truncate its SVD, and fold
// the inverse scales back so a*b approximates W itself.
inline LowRankFactors channel_aware_factors(const Matrix2D& w,
                                            const std::vector<double>& input_scale,
                                            const std::vector<double>& output_scale, int rank) {
    Matrix2D scaled_w(w.rows(), w.cols());
    for (std::size_t o = 0; o < w.rows(); ++o)
        for (std::size_t c = 0; c < w.cols(); ++c)
            scaled_w(o, c) = output_scale[o] * w(o, c) * input_scale[c];
    auto [wa, wb] = truncate_factors(thin_svd(scaled_w), rank);
    for (std::size_t o = 0; o < wa.rows(); ++o)
        for (std::size_t j = 0; j < wa.cols(); ++j) wa(o, j) /= output_scale[o];
    for (std::size_t j = 0; j < wb.rows(); ++j)
        for (std::size_t c = 0; c < wb.cols(); ++c) wb(j, c) /= input_scale[c];
    return LowRankFactors{std::move(wa), std::move(wb)};
}

// Per-layer channel-aware calibration over the whole model.
inline CalibParams channel_aware_calib(const ModelWeights& model,
                                       const std::vector<ScalePair>& scales, int rank) {
    const ModelConfig& cfg = model.config;
    if (static_cast<int>(scales.size()) != cfg.n_layers())
        throw std::invalid_argument("channel_aware_calib: need one scale pair per layer");
    CalibParams params;
    params.rank = rank;
    params.method = scales.empty() ? ScaleMethod::Identity : scales.front().method;
    params.layers.resize(cfg.n_layers());
    for (int f = 0; f < cfg.n_layers(); ++f) {
        const LayerId id = LayerId::from_flat(f);
        detail::check_rank(cfg, id, rank);
        const Matrix2D& w = model.weight(id);
        const ScalePair& sp = scales[f];
        if (sp.input_scale.size() != w.cols() || sp.output_scale.size() != w.rows())
            throw std::invalid_argument("channel_aware_calib: scale lengths wrong at " +
                                        id.name());
        for (double v : sp.input_scale)
            if (!(v >= kScaleFloor) || !std::isfinite(v))
                throw std::invalid_argument("channel_aware_calib: input scale below floor at " +
                                            id.name());
        for (double v : sp.output_scale)
            if (!(v >= kScaleFloor) || !std::isfinite(v))
                throw std::invalid_argument("channel_aware_calib: output scale below floor at " +
                                            id.name());
        params.layers[f] = channel_aware_factors(w, sp.input_scale, sp.output_scale, rank);
    }
    return params;
}

} // namespace icc
