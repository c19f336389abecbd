#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icc/ledger.hpp"

namespace icc {

class ShapeError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of 64-bit floats. All internal arithmetic is double;
// 32-bit precision exists only at the weight-file boundary.
class Matrix2D {
public:
    Matrix2D() = default;
    Matrix2D(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix2D identity(std::size_t n) {
        Matrix2D m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix2D from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix2D m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_) throw ShapeError("from_rows: ragged initializer");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    bool same_shape(const Matrix2D& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    friend bool operator==(const Matrix2D& a, const Matrix2D& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Exact dense product. If a ledger is attached, records rows*cols*inner MACs
// against the ledger's current context.
inline Matrix2D matmul(const Matrix2D& a, const Matrix2D& b, MacLedger* ledger = nullptr) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ, a is " + a.shape_str() +
                         ", b is " + b.shape_str());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix2D out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    if (ledger) ledger->add(static_cast<std::uint64_t>(m) * n * k);
    return out;
}

inline Matrix2D transpose(const Matrix2D& a) {
    Matrix2D t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix2D add(const Matrix2D& a, const Matrix2D& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline Matrix2D sub(const Matrix2D& a, const Matrix2D& b) {
    if (!a.same_shape(b))
        throw ShapeError("sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline Matrix2D scaled(const Matrix2D& a, double s) {
    Matrix2D out = a;
    for (double& v : out.storage()) v *= s;
    return out;
}

inline double frobenius_norm(const Matrix2D& m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) sum += m.data()[i] * m.data()[i];
    return std::sqrt(sum);
}

inline double max_abs(const Matrix2D& m) {
    double mx = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) mx = std::max(mx, std::abs(m.data()[i]));
    return mx;
}

inline double max_abs_diff(const Matrix2D& a, const Matrix2D& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double mx = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
    return mx;
}

inline double mean_squared_diff(const Matrix2D& a, const Matrix2D& b) {
    if (!a.same_shape(b))
        throw ShapeError("mean_squared_diff: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    if (a.size() == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

} // namespace icc
