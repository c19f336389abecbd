#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icc/calibration.hpp"
#include "icc/matrix.hpp"
#include "icc/model.hpp"

namespace icc {

// Weight/calibration container "ICW1": magic, u32 version, u32 tensor count;
// per tensor u16 name length + UTF-8 name, u8 dtype (0 = f32, 1 = f64),
// u8 rank, u64 dims, raw little-endian data. Bit-exact round trip for f64.

class ContainerError : public std::runtime_error {
public:
    ContainerError(const std::string& msg, std::size_t at)
        : std::runtime_error(msg + " (offset " + std::to_string(at) + ")"), offset(at) {}
    std::size_t offset;
};

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedTensor {
    std::string name;
    Dtype dtype = Dtype::F64;
    std::vector<std::uint64_t> dims;
    std::vector<double> data; // held as doubles regardless of storage dtype

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (std::uint64_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    static NamedTensor from_matrix(std::string name, const Matrix2D& m,
                                   Dtype dtype = Dtype::F64) {
        NamedTensor t;
        t.name = std::move(name);
        t.dtype = dtype;
        t.dims = {m.rows(), m.cols()};
        t.data = m.storage();
        return t;
    }
    static NamedTensor from_vector(std::string name, const std::vector<double>& v,
                                   Dtype dtype = Dtype::F64) {
        NamedTensor t;
        t.name = std::move(name);
        t.dtype = dtype;
        t.dims = {v.size()};
        t.data = v;
        return t;
    }
    Matrix2D to_matrix() const {
        if (dims.size() != 2)
            throw std::invalid_argument("tensor " + name + " is not rank 2");
        Matrix2D m(dims[0], dims[1]);
        m.storage() = data;
        return m;
    }
    std::vector<double> to_vector() const {
        if (dims.size() != 1)
            throw std::invalid_argument("tensor " + name + " is not rank 1");
        return data;
    }
};

namespace detail {

constexpr char kMagic[4] = {'I', 'C', 'W', '1'};
constexpr std::uint32_t kFormatVersion = 1;

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}
template <typename T>
void put_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    put_bytes(out, b, sizeof(T));
}
inline void put_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le<std::uint64_t>(out, bits);
}
inline void put_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le<std::uint32_t>(out, bits);
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
    std::size_t offset() const { return pos_; }
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size())
            throw ContainerError(std::string("truncated file while reading ") + what, pos_);
    }
    template <typename T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    double get_f64(const char* what) {
        const std::uint64_t bits = get_le<std::uint64_t>(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    float get_f32(const char* what) {
        const std::uint32_t bits = get_le<std::uint32_t>(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string get_str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_tensors(const std::vector<NamedTensor>& tensors) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
        for (std::size_t j = i + 1; j < tensors.size(); ++j)
            if (tensors[i].name == tensors[j].name)
                throw std::invalid_argument("container: duplicate tensor name " +
                                            tensors[i].name);
    std::string out;
    detail::put_bytes(out, detail::kMagic, 4);
    detail::put_le<std::uint32_t>(out, detail::kFormatVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        if (t.name.size() > 0xffff)
            throw std::invalid_argument("container: tensor name too long");
        if (t.data.size() != t.element_count())
            throw std::invalid_argument("container: tensor " + t.name +
                                        " data does not match dims");
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        detail::put_bytes(out, t.name.data(), t.name.size());
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
        for (std::uint64_t d : t.dims) detail::put_le<std::uint64_t>(out, d);
        if (t.dtype == Dtype::F64)
            for (double v : t.data) detail::put_f64_le(out, v);
        else
            for (double v : t.data) detail::put_f32_le(out, static_cast<float>(v));
    }
    return out;
}

inline std::vector<NamedTensor> deserialize_tensors(std::string bytes) {
    detail::Reader r(std::move(bytes));
    const std::string magic = r.get_str(4, "magic");
    if (std::memcmp(magic.data(), detail::kMagic, 4) != 0)
        throw ContainerError("bad magic, not an ICW1 container", 0);
    const auto version = r.get_le<std::uint32_t>("version");
    if (version != detail::kFormatVersion)
        throw ContainerError("unsupported container version " + std::to_string(version), 4);
    const auto count = r.get_le<std::uint32_t>("tensor count");
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto name_len = r.get_le<std::uint16_t>("name length");
        t.name = r.get_str(name_len, "name");
        const auto dtype = r.get_le<std::uint8_t>("dtype");
        if (dtype > 1) throw ContainerError("unknown dtype " + std::to_string(dtype),
                                            r.offset() - 1);
        t.dtype = static_cast<Dtype>(dtype);
        const auto rank = r.get_le<std::uint8_t>("rank");
        t.dims.resize(rank);
        for (std::uint8_t d = 0; d < rank; ++d) t.dims[d] = r.get_le<std::uint64_t>("dims");
        const std::uint64_t n = t.element_count();
        t.data.resize(n);
        for (std::uint64_t e = 0; e < n; ++e)
            t.data[e] = t.dtype == Dtype::F64 ? r.get_f64("data")
                                              : static_cast<double>(r.get_f32("data"));
        tensors.push_back(std::move(t));
    }
    if (!r.at_end())
        throw ContainerError("trailing bytes after last tensor", r.offset());
    return tensors;
}

inline void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
    const std::string bytes = serialize_tensors(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_tensors(std::move(bytes));
}

// ---------------------------------------------------------------------------
// Model and calibration on top of the raw container
// ---------------------------------------------------------------------------

inline std::vector<NamedTensor> model_to_tensors(const ModelWeights& w,
                                                 Dtype dtype = Dtype::F64) {
    std::vector<NamedTensor> out;
    const ModelConfig& c = w.config;
    out.push_back(NamedTensor::from_vector(
        "__config__",
        {static_cast<double>(c.depth), static_cast<double>(c.hidden),
         static_cast<double>(c.heads), static_cast<double>(c.tokens),
         static_cast<double>(c.mlp_ratio), static_cast<double>(c.cond_classes)}));
    for (int bi = 0; bi < c.depth; ++bi) {
        const BlockWeights& b = w.blocks[bi];
        const std::string prefix = "block" + std::to_string(bi) + ".";
        out.push_back(NamedTensor::from_matrix(prefix + "qkv.weight", b.qkv_w, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "qkv.bias", b.qkv_b, dtype));
        out.push_back(NamedTensor::from_matrix(prefix + "attn_proj.weight", b.proj_w, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "attn_proj.bias", b.proj_b, dtype));
        out.push_back(NamedTensor::from_matrix(prefix + "ffn_fc1.weight", b.fc1_w, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "ffn_fc1.bias", b.fc1_b, dtype));
        out.push_back(NamedTensor::from_matrix(prefix + "ffn_fc2.weight", b.fc2_w, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "ffn_fc2.bias", b.fc2_b, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "ln1.gain", b.ln1_gain, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "ln1.offset", b.ln1_offset, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "ln2.gain", b.ln2_gain, dtype));
        out.push_back(NamedTensor::from_vector(prefix + "ln2.offset", b.ln2_offset, dtype));
    }
    out.push_back(NamedTensor::from_matrix("head.weight", w.head_w, dtype));
    out.push_back(NamedTensor::from_vector("head.bias", w.head_b, dtype));
    out.push_back(NamedTensor::from_matrix("class_embed", w.class_embed, dtype));
    return out;
}

inline ModelWeights model_from_tensors(const std::vector<NamedTensor>& tensors) {
    auto find = [&](const std::string& name) -> const NamedTensor& {
        for (const NamedTensor& t : tensors)
            if (t.name == name) return t;
        throw std::invalid_argument("weight container: missing tensor " + name);
    };
    const std::vector<double> cfg_v = find("__config__").to_vector();
    if (cfg_v.size() != 6)
        throw std::invalid_argument("weight container: malformed __config__");
    ModelConfig c;
    c.depth = static_cast<int>(cfg_v[0]);
    c.hidden = static_cast<int>(cfg_v[1]);
    c.heads = static_cast<int>(cfg_v[2]);
    c.tokens = static_cast<int>(cfg_v[3]);
    c.mlp_ratio = static_cast<int>(cfg_v[4]);
    c.cond_classes = static_cast<int>(cfg_v[5]);
    c.validate();

    ModelWeights w;
    w.config = c;
    w.blocks.resize(c.depth);
    for (int bi = 0; bi < c.depth; ++bi) {
        BlockWeights& b = w.blocks[bi];
        const std::string prefix = "block" + std::to_string(bi) + ".";
        b.qkv_w = find(prefix + "qkv.weight").to_matrix();
        b.qkv_b = find(prefix + "qkv.bias").to_vector();
        b.proj_w = find(prefix + "attn_proj.weight").to_matrix();
        b.proj_b = find(prefix + "attn_proj.bias").to_vector();
        b.fc1_w = find(prefix + "ffn_fc1.weight").to_matrix();
        b.fc1_b = find(prefix + "ffn_fc1.bias").to_vector();
        b.fc2_w = find(prefix + "ffn_fc2.weight").to_matrix();
        b.fc2_b = find(prefix + "ffn_fc2.bias").to_vector();
        b.ln1_gain = find(prefix + "ln1.gain").to_vector();
        b.ln1_offset = find(prefix + "ln1.offset").to_vector();
        b.ln2_gain = find(prefix + "ln2.gain").to_vector();
        b.ln2_offset = find(prefix + "ln2.offset").to_vector();
    }
    w.head_w = find("head.weight").to_matrix();
    w.head_b = find("head.bias").to_vector();
    w.class_embed = find("class_embed").to_matrix();
    return w;
}

inline void save_model(const std::string& path, const ModelWeights& w,
                       Dtype dtype = Dtype::F64) {
    save_tensors(path, model_to_tensors(w, dtype));
}
inline ModelWeights load_model(const std::string& path) {
    return model_from_tensors(load_tensors(path));
}

inline std::vector<NamedTensor> calib_to_tensors(const CalibParams& p) {
    std::vector<NamedTensor> out;
    out.push_back(NamedTensor::from_vector(
        "__calib__",
        {static_cast<double>(p.rank), static_cast<double>(static_cast<int>(p.method))}));
    for (std::size_t f = 0; f < p.layers.size(); ++f) {
        const std::string prefix = LayerId::from_flat(static_cast<int>(f)).name() + ".";
        out.push_back(NamedTensor::from_matrix(prefix + "wa", p.layers[f].a));
        out.push_back(NamedTensor::from_matrix(prefix + "wb", p.layers[f].b));
    }
    return out;
}

inline CalibParams calib_from_tensors(const std::vector<NamedTensor>& tensors,
                                      const ModelConfig& cfg) {
    auto find = [&](const std::string& name) -> const NamedTensor& {
        for (const NamedTensor& t : tensors)
            if (t.name == name) return t;
        throw std::invalid_argument("calibration container: missing tensor " + name);
    };
    const std::vector<double> meta = find("__calib__").to_vector();
    if (meta.size() != 2)
        throw std::invalid_argument("calibration container: malformed __calib__");
    CalibParams p;
    p.rank = static_cast<int>(meta[0]);
    p.method = static_cast<ScaleMethod>(static_cast<int>(meta[1]));
    p.layers.resize(cfg.n_layers());
    for (int f = 0; f < cfg.n_layers(); ++f) {
        const std::string prefix = LayerId::from_flat(f).name() + ".";
        p.layers[f].a = find(prefix + "wa").to_matrix();
        p.layers[f].b = find(prefix + "wb").to_matrix();
    }
    p.validate(cfg);
    return p;
}

inline void save_calib(const std::string& path, const CalibParams& p) {
    save_tensors(path, calib_to_tensors(p));
}
inline CalibParams load_calib(const std::string& path, const ModelConfig& cfg) {
    return calib_from_tensors(load_tensors(path), cfg);
}

} // namespace icc
