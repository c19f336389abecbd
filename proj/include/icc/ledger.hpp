#pragma once

#include <cstdint>
#include <map>

namespace icc {

enum class MacKind : int {
    LinearFull = 0,         // dense weight-times-activation product
    LinearIncrement = 1,    // low-rank cache correction
    AttentionNonlinear = 2, // QK^T and A*V inside attention
    Overhead = 3,           // everything outside the transformer blocks (final head, ...)
};

inline const char* mac_kind_name(MacKind k) {
    switch (k) {
    case MacKind::LinearFull: return "linear_full";
    case MacKind::LinearIncrement: return "linear_increment";
    case MacKind::AttentionNonlinear: return "attention_nonlinear";
    case MacKind::Overhead: return "overhead";
    }
    return "?";
}

// Exact multiply-accumulate bookkeeping, bucketed by (step, block, slot, kind).
// step is the 1-based sampler step position; block/slot index the linear layer.
// -1 means "outside any step/block/slot". Counts are exact integers.
class MacLedger {
public:
    struct Key {
        int step;
        int block;
        int slot;
        MacKind kind;
        auto operator<=>(const Key&) const = default;
    };

    // Context set by the caller; matmul() charges against it.
    void set_step(int step) { step_ = step; }
    void set_layer(int block, int slot) {
        block_ = block;
        slot_ = slot;
    }
    void set_kind(MacKind kind) { kind_ = kind; }
    int step() const { return step_; }

    void add(std::uint64_t macs) {
        if (macs != 0) counts_[Key{step_, block_, slot_, kind_}] += macs;
    }

    void charge(int step, int block, int slot, MacKind kind, std::uint64_t macs) {
        if (macs != 0) counts_[Key{step, block, slot, kind}] += macs;
    }

    std::uint64_t total() const {
        std::uint64_t sum = 0;
        for (const auto& [k, v] : counts_) sum += v;
        return sum;
    }

    std::uint64_t total(MacKind kind) const {
        std::uint64_t sum = 0;
        for (const auto& [k, v] : counts_)
            if (k.kind == kind) sum += v;
        return sum;
    }

    std::uint64_t step_total(int step) const {
        std::uint64_t sum = 0;
        for (const auto& [k, v] : counts_)
            if (k.step == step) sum += v;
        return sum;
    }

    // All MACs attributable to the transformer blocks proper.
    std::uint64_t block_layer_total() const {
        std::uint64_t sum = 0;
        for (const auto& [k, v] : counts_)
            if (k.kind != MacKind::Overhead) sum += v;
        return sum;
    }

    std::uint64_t at(int step, int block, int slot, MacKind kind) const {
        auto it = counts_.find(Key{step, block, slot, kind});
        return it == counts_.end() ? 0 : it->second;
    }

    // Deterministic merge: key-ordered map addition.
    void merge(const MacLedger& other) {
        for (const auto& [k, v] : other.counts_) counts_[k] += v;
    }

    void clear() { counts_.clear(); }

    const std::map<Key, std::uint64_t>& entries() const { return counts_; }

private:
    std::map<Key, std::uint64_t> counts_;
    int step_ = -1;
    int block_ = -1;
    int slot_ = -1;
    MacKind kind_ = MacKind::Overhead;
};

} // namespace icc
