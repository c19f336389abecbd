#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icc/ledger.hpp"
#include "icc/matrix.hpp"
#include "icc/rng.hpp"

namespace icc {

// ---------------------------------------------------------------------------
// Layer addressing
// ---------------------------------------------------------------------------

enum class Slot : int { Qkv = 0, AttnProj = 1, FfnFc1 = 2, FfnFc2 = 3 };
constexpr int kSlotsPerBlock = 4;

inline const char* slot_name(Slot s) {
    switch (s) {
    case Slot::Qkv: return "qkv";
    case Slot::AttnProj: return "attn_proj";
    case Slot::FfnFc1: return "ffn_fc1";
    case Slot::FfnFc2: return "ffn_fc2";
    }
    return "?";
}

struct LayerId {
    int block = 0;
    Slot slot = Slot::Qkv;

    int flat() const { return block * kSlotsPerBlock + static_cast<int>(slot); }
    static LayerId from_flat(int f) { return {f / kSlotsPerBlock, static_cast<Slot>(f % kSlotsPerBlock)}; }
    std::string name() const { return "block" + std::to_string(block) + "." + slot_name(slot); }
    bool operator==(const LayerId&) const = default;
};

// ---------------------------------------------------------------------------
// Configuration and weights
// ---------------------------------------------------------------------------

struct ModelConfig {
    int depth = 2;        // L transformer blocks
    int hidden = 32;      // d channels
    int heads = 4;        // h attention heads
    int tokens = 16;      // N tokens per sample
    int mlp_ratio = 4;
    int cond_classes = 10;

    int n_layers() const { return depth * kSlotsPerBlock; }
    int null_class() const { return cond_classes; } // extra row for unconditional runs

    void validate() const {
        if (depth < 1 || hidden < 1 || heads < 1 || tokens < 1 || mlp_ratio < 1 ||
            cond_classes < 1)
            throw std::invalid_argument("model config: all counts must be >= 1");
        if (hidden % heads != 0)
            throw std::invalid_argument("model config: hidden " + std::to_string(hidden) +
                                        " not divisible by heads " + std::to_string(heads));
    }

    // weight shape (C_o, C_i) of a slot
    std::pair<int, int> layer_shape(Slot s) const {
        switch (s) {
        case Slot::Qkv: return {3 * hidden, hidden};
        case Slot::AttnProj: return {hidden, hidden};
        case Slot::FfnFc1: return {mlp_ratio * hidden, hidden};
        case Slot::FfnFc2: return {hidden, mlp_ratio * hidden};
        }
        return {0, 0};
    }

    int min_layer_dim() const {
        int md = hidden;
        for (int s = 0; s < kSlotsPerBlock; ++s) {
            auto [co, ci] = layer_shape(static_cast<Slot>(s));
            md = std::min({md, co, ci});
        }
        return md;
    }

    bool operator==(const ModelConfig&) const = default;
};

struct BlockWeights {
    Matrix2D qkv_w;
    std::vector<double> qkv_b;
    Matrix2D proj_w;
    std::vector<double> proj_b;
    Matrix2D fc1_w;
    std::vector<double> fc1_b;
    Matrix2D fc2_w;
    std::vector<double> fc2_b;
    std::vector<double> ln1_gain, ln1_offset;
    std::vector<double> ln2_gain, ln2_offset;
};

struct ModelWeights {
    ModelConfig config;
    std::vector<BlockWeights> blocks;
    Matrix2D head_w;              // d x d
    std::vector<double> head_b;   // d
    Matrix2D class_embed;         // (cond_classes + 1) x d, last row = null class

    const Matrix2D& weight(const LayerId& id) const {
        const BlockWeights& b = blocks[id.block];
        switch (id.slot) {
        case Slot::Qkv: return b.qkv_w;
        case Slot::AttnProj: return b.proj_w;
        case Slot::FfnFc1: return b.fc1_w;
        case Slot::FfnFc2: return b.fc2_w;
        }
        return b.qkv_w;
    }
    Matrix2D& weight(const LayerId& id) {
        return const_cast<Matrix2D&>(static_cast<const ModelWeights&>(*this).weight(id));
    }
    const std::vector<double>& bias(const LayerId& id) const {
        const BlockWeights& b = blocks[id.block];
        switch (id.slot) {
        case Slot::Qkv: return b.qkv_b;
        case Slot::AttnProj: return b.proj_b;
        case Slot::FfnFc1: return b.fc1_b;
        case Slot::FfnFc2: return b.fc2_b;
        }
        return b.qkv_b;
    }
};

// Deterministic init: every weight element ~ N(0, 1/C_i) drawn from one
// module-level stream in a fixed order; biases zero; layer-norm gain 1.
inline ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const int d = config.hidden;
    Rng rng(seed);
    auto draw = [&rng](Matrix2D& w, int fan_in) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.gauss() * scale;
    };

    ModelWeights mw;
    mw.config = config;
    mw.blocks.resize(config.depth);
    for (BlockWeights& b : mw.blocks) {
        b.qkv_w = Matrix2D(3 * d, d);
        draw(b.qkv_w, d);
        b.qkv_b.assign(3 * d, 0.0);
        b.proj_w = Matrix2D(d, d);
        draw(b.proj_w, d);
        b.proj_b.assign(d, 0.0);
        b.fc1_w = Matrix2D(config.mlp_ratio * d, d);
        draw(b.fc1_w, d);
        b.fc1_b.assign(config.mlp_ratio * d, 0.0);
        b.fc2_w = Matrix2D(d, config.mlp_ratio * d);
        draw(b.fc2_w, config.mlp_ratio * d);
        b.fc2_b.assign(d, 0.0);
        b.ln1_gain.assign(d, 1.0);
        b.ln1_offset.assign(d, 0.0);
        b.ln2_gain.assign(d, 1.0);
        b.ln2_offset.assign(d, 0.0);
    }
    mw.head_w = Matrix2D(d, d);
    draw(mw.head_w, d);
    mw.head_b.assign(d, 0.0);
    mw.class_embed = Matrix2D(config.cond_classes + 1, d);
    draw(mw.class_embed, d);
    return mw;
}

// ---------------------------------------------------------------------------
// Taps and execution hooks
// ---------------------------------------------------------------------------

// Input/output of each linear layer captured from one forward pass. Slots are
// populated only for layers executed in full.
struct TapRecord {
    struct Entry {
        Matrix2D input;
        Matrix2D output;
    };
    std::vector<std::optional<Entry>> taps;

    void reset(int n_layers) {
        taps.assign(n_layers, std::nullopt);
    }
    bool has(const LayerId& id) const {
        return id.flat() < static_cast<int>(taps.size()) && taps[id.flat()].has_value();
    }
    const Entry& at(const LayerId& id) const { return *taps[id.flat()]; }
    void record(const LayerId& id, Matrix2D input, Matrix2D output) {
        if (id.flat() >= static_cast<int>(taps.size())) taps.resize(id.flat() + 1);
        taps[id.flat()] = Entry{std::move(input), std::move(output)};
    }
};

// Hook through which every linear layer of the model is evaluated. The
// caching engine substitutes its own policy here; the default executor
// computes everything in full.
class LayerExecutor {
public:
    virtual ~LayerExecutor() = default;

    // y (N x C_o) for input x (N x C_i) at the given layer.
    virtual Matrix2D linear(const LayerId& id, const Matrix2D& x) = 0;

    // True when the block's module outputs come straight from the cache and
    // the nonlinear internals are skipped entirely (naive caching reuse).
    virtual bool reuse_module_outputs(int /*block*/) const { return false; }

    // Cached module output for the bypass path above.
    virtual const Matrix2D& cached_output(const LayerId& id) const = 0;

    virtual MacLedger* ledger() const { return nullptr; }
};

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const LayerId& id, const std::string& where)
        : std::runtime_error("non-finite activation at " + id.name() + " (" + where + ")"),
          layer(id) {}
    LayerId layer;
};

// Full-compute executor: plain affine evaluation, optional tap capture and
// MAC accounting.
class FullComputeExecutor : public LayerExecutor {
public:
    FullComputeExecutor(const ModelWeights& weights, TapRecord* taps = nullptr,
                        MacLedger* ledger = nullptr)
        : weights_(&weights), taps_(taps), ledger_(ledger) {
        if (taps_) taps_->reset(weights.config.n_layers());
    }

    Matrix2D linear(const LayerId& id, const Matrix2D& x) override {
        if (ledger_) {
            ledger_->set_layer(id.block, static_cast<int>(id.slot));
            ledger_->set_kind(MacKind::LinearFull);
        }
        Matrix2D y = affine(*weights_, id, x, ledger_);
        if (taps_) taps_->record(id, x, y);
        return y;
    }

    const Matrix2D& cached_output(const LayerId& id) const override {
        throw std::logic_error("full compute has no cache for " + id.name());
    }

    MacLedger* ledger() const override { return ledger_; }

    // y = x W^T + b, the exact dense product every policy falls back to.
    static Matrix2D affine(const ModelWeights& w, const LayerId& id, const Matrix2D& x,
                           MacLedger* ledger) {
        Matrix2D y = matmul(x, transpose(w.weight(id)), ledger);
        const std::vector<double>& b = w.bias(id);
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
        return y;
    }

private:
    const ModelWeights* weights_;
    TapRecord* taps_;
    MacLedger* ledger_;
};

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kLayerNormEps = 1e-5;

inline Matrix2D layer_norm(const Matrix2D& x, const std::vector<double>& gain,
                           const std::vector<double>& offset) {
    Matrix2D out(x.rows(), x.cols());
    const std::size_t d = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t j = 0; j < d; ++j)
            out(i, j) = (x(i, j) - mean) * inv * gain[j] + offset[j];
    }
    return out;
}

// tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline double gelu(double x) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    constexpr double kCubicCoeff = 0.044715;
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kCubicCoeff * x * x * x)));
}

// Sinusoidal timestep embedding over d channels, parameter-free.
inline std::vector<double> timestep_embedding(int t, int d) {
    std::vector<double> emb(d);
    for (int i = 0; i < d; ++i) {
        const int pair = i / 2;
        const double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(d));
        emb[i] = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
    }
    return emb;
}

// softmax attention over h heads; charges 2 N^2 d MACs (QK^T and A V).
inline Matrix2D attention(const Matrix2D& qkv, int heads, int block, MacLedger* ledger) {
    const std::size_t n = qkv.rows();
    const std::size_t d = qkv.cols() / 3;
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix2D out(n, d);
    for (int h = 0; h < heads; ++h) {
        const std::size_t q0 = h * dh, k0 = d + h * dh, v0 = 2 * d + h * dh;
        // scores = softmax(Q K^T / sqrt(dh)) per row
        Matrix2D scores(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qkv(i, q0 + c) * qkv(j, k0 + c);
                scores(i, j) = s * scale;
            }
        for (std::size_t i = 0; i < n; ++i) {
            double mx = scores(i, 0);
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                scores(i, j) = std::exp(scores(i, j) - mx);
                sum += scores(i, j);
            }
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j < n; ++j) scores(i, j) *= inv;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += scores(i, j) * qkv(j, v0 + c);
                out(i, h * dh + c) = s;
            }
    }
    if (ledger)
        ledger->charge(ledger->step(), block, -1, MacKind::AttentionNonlinear,
                       2ull * n * n * d);
    return out;
}

inline void check_finite(const Matrix2D& m, const LayerId& id, const char* where) {
    if (!m.all_finite()) throw NonFiniteError(id, where);
}

} // namespace detail

// Pre-LN transformer forward: x = z_t + embed(t) + embed(cond), then per
// block x += MHSA(LN(x)) and x += FFN(LN(x)); a final linear head emits the
// noise estimate. Every linear layer routes through the executor.
inline Matrix2D forward(const ModelWeights& weights, const Matrix2D& z_t, int t, int cond,
                        LayerExecutor& exec) {
    const ModelConfig& cfg = weights.config;
    if (static_cast<int>(z_t.rows()) != cfg.tokens ||
        static_cast<int>(z_t.cols()) != cfg.hidden)
        throw ShapeError("forward: z_t is " + z_t.shape_str() + ", expected " +
                         std::to_string(cfg.tokens) + "x" + std::to_string(cfg.hidden));
    if (cond < 0 || cond > cfg.cond_classes)
        throw std::invalid_argument("forward: class index " + std::to_string(cond) +
                                    " outside [0, " + std::to_string(cfg.cond_classes) + "]");
    if (!z_t.all_finite()) throw std::invalid_argument("forward: non-finite input latent");

    MacLedger* ledger = exec.ledger();
    const std::vector<double> temb = detail::timestep_embedding(t, cfg.hidden);
    Matrix2D x = z_t;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            x(i, j) += temb[j] + weights.class_embed(cond, j);

    for (int b = 0; b < cfg.depth; ++b) {
        const BlockWeights& bw = weights.blocks[b];
        if (exec.reuse_module_outputs(b)) {
            x = add(x, exec.cached_output({b, Slot::AttnProj}));
            x = add(x, exec.cached_output({b, Slot::FfnFc2}));
            continue;
        }
        Matrix2D h1 = detail::layer_norm(x, bw.ln1_gain, bw.ln1_offset);
        Matrix2D qkv = exec.linear({b, Slot::Qkv}, h1);
        detail::check_finite(qkv, {b, Slot::Qkv}, "output");
        Matrix2D attn = detail::attention(qkv, cfg.heads, b, ledger);
        Matrix2D proj = exec.linear({b, Slot::AttnProj}, attn);
        detail::check_finite(proj, {b, Slot::AttnProj}, "output");
        x = add(x, proj);

        Matrix2D h2 = detail::layer_norm(x, bw.ln2_gain, bw.ln2_offset);
        Matrix2D f1 = exec.linear({b, Slot::FfnFc1}, h2);
        detail::check_finite(f1, {b, Slot::FfnFc1}, "output");
        for (std::size_t i = 0; i < f1.size(); ++i) f1.data()[i] = detail::gelu(f1.data()[i]);
        Matrix2D f2 = exec.linear({b, Slot::FfnFc2}, f1);
        detail::check_finite(f2, {b, Slot::FfnFc2}, "output");
        x = add(x, f2);
    }

    if (ledger) {
        ledger->set_layer(-1, -1);
        ledger->set_kind(MacKind::Overhead);
    }
    Matrix2D eps_hat = matmul(x, transpose(weights.head_w), ledger);
    for (std::size_t i = 0; i < eps_hat.rows(); ++i)
        for (std::size_t j = 0; j < eps_hat.cols(); ++j) eps_hat(i, j) += weights.head_b[j];
    return eps_hat;
}

// Convenience wrapper: full compute with tap capture.
inline std::pair<Matrix2D, TapRecord> forward_with_taps(const ModelWeights& weights,
                                                        const Matrix2D& z_t, int t, int cond,
                                                        MacLedger* ledger = nullptr) {
    TapRecord taps;
    FullComputeExecutor exec(weights, &taps, ledger);
    Matrix2D eps_hat = forward(weights, z_t, t, cond, exec);
    return {std::move(eps_hat), std::move(taps)};
}

} // namespace icc
