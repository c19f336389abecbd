#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icc/matrix.hpp"

namespace icc {

class SvdError : public std::runtime_error {
public:
    SvdError(const std::string& msg, double residual)
        : std::runtime_error(msg), residual_off_mass(residual) {}
    double residual_off_mass;
};

// Thin SVD of an m x n matrix: u is m x k, sigma has k entries sorted
// non-increasing, vt is k x n, with k = min(m, n).
struct SvdFactors {
    Matrix2D u;
    std::vector<double> sigma;
    Matrix2D vt;

    Matrix2D reconstruct() const {
        Matrix2D us = u;
        for (std::size_t i = 0; i < us.rows(); ++i)
            for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= sigma[j];
        return matmul(us, vt);
    }
};

namespace detail {

// One-sided Jacobi on a tall matrix (m >= n): orthogonalize the columns of a
// with right rotations, accumulating them into v (n x n). Deterministic cyclic
// sweep order. Convergence is declared when the off-diagonal Gram mass
// sqrt(sum_{i!=j} (a_i . a_j)^2) drops below 1e-14 * ||A||_F^2; the sweep
// budget is 60.
struct JacobiResult {
    Matrix2D a;  // columns become sigma_j * u_j
    Matrix2D v;  // right singular vectors as columns
};

inline JacobiResult one_sided_jacobi(const Matrix2D& input) {
    const std::size_t n = input.cols();
    // Work on transposes so each column of A / V is a contiguous row.
    Matrix2D at = transpose(input);
    Matrix2D vt = Matrix2D::identity(n);

    double frob_sq = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) frob_sq += at.data()[i] * at.data()[i];
    if (frob_sq == 0.0 || n < 2) return {transpose(at), transpose(vt)};

    const double converge_threshold = 1e-14 * frob_sq;
    const double rotate_threshold = 1e-15; // relative pairwise trigger
    const int sweep_budget = 60;

    auto row_dot = [](std::span<const double> x, std::span<const double> y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        return s;
    };
    auto rotate_rows = [](std::span<double> x, std::span<double> y, double c, double s) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double xi = x[i], yi = y[i];
            x[i] = c * xi - s * yi;
            y[i] = s * xi + c * yi;
        }
    };

    double off_mass = 0.0;
    for (int sweep = 0; sweep < sweep_budget; ++sweep) {
        std::size_t rotations = 0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = row_dot(at.row(p), at.row(q));
                const double app = row_dot(at.row(p), at.row(p));
                const double aqq = row_dot(at.row(q), at.row(q));
                if (std::abs(apq) <= rotate_threshold * std::sqrt(app * aqq)) continue;

                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_rows(at.row(p), at.row(q), c, s);
                rotate_rows(vt.row(p), vt.row(q), c, s);
                ++rotations;
            }
        }
        double off_sq = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double d = row_dot(at.row(p), at.row(q));
                off_sq += 2.0 * d * d;
            }
        off_mass = std::sqrt(off_sq);
        if (off_mass < converge_threshold || rotations == 0)
            return {transpose(at), transpose(vt)};
    }
    throw SvdError("thin_svd: Jacobi sweeps exhausted, residual off-diagonal mass " +
                       std::to_string(off_mass),
                   off_mass);
}

// Deterministic fill-in for left singular vectors of (numerically) zero
// columns: first canonical basis vector that survives orthogonalization
// against the columns already placed.
inline void complete_zero_column(Matrix2D& u, std::size_t col) {
    const std::size_t m = u.rows();
    for (std::size_t cand = 0; cand < m; ++cand) {
        std::vector<double> e(m, 0.0);
        e[cand] = 1.0;
        for (std::size_t j = 0; j < u.cols(); ++j) {
            if (j == col) continue;
            double dot = 0.0;
            for (std::size_t i = 0; i < m; ++i) dot += e[i] * u(i, j);
            for (std::size_t i = 0; i < m; ++i) e[i] -= dot * u(i, j);
        }
        double norm_sq = 0.0;
        for (double x : e) norm_sq += x * x;
        if (norm_sq > 0.25) {
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (std::size_t i = 0; i < m; ++i) u(i, col) = e[i] * inv;
            return;
        }
    }
}

} // namespace detail

// Thin SVD via one-sided Jacobi with cyclic sweeps. Deterministic: fixed
// sweep order, descending sigma with ties broken by original column index,
// and the largest-magnitude element of every left singular vector made
// positive. Wide inputs are handled by factoring the transpose.
inline SvdFactors thin_svd(const Matrix2D& w) {
    if (!w.all_finite()) throw std::invalid_argument("thin_svd: input has non-finite entries");
    const bool wide = w.rows() < w.cols();
    detail::JacobiResult jr = detail::one_sided_jacobi(wide ? transpose(w) : w);

    const std::size_t m = jr.a.rows(), n = jr.a.cols(); // m >= n, k = n
    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += jr.a(i, j) * jr.a(i, j);
        norms[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return norms[i] > norms[j]; });

    const double sigma_max = n == 0 ? 0.0 : norms[order[0]];
    auto is_zero_col = [&](std::size_t src) {
        return norms[src] <= 0.0 || norms[src] < sigma_max * 1e-250;
    };
    Matrix2D left(m, n), right_t(n, jr.v.rows());
    std::vector<double> sigma(n);
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t src = order[jj];
        sigma[jj] = norms[src];
        if (!is_zero_col(src)) {
            const double inv = 1.0 / norms[src];
            for (std::size_t i = 0; i < m; ++i) left(i, jj) = jr.a(i, src) * inv;
        }
        for (std::size_t i = 0; i < jr.v.rows(); ++i) right_t(jj, i) = jr.v(i, src);
    }
    for (std::size_t jj = 0; jj < n; ++jj)
        if (is_zero_col(order[jj])) detail::complete_zero_column(left, jj);

    SvdFactors f;
    if (wide) {
        // w^T = left * diag(sigma) * right_t  =>  w = right_t^T * diag * left^T
        f.u = transpose(right_t);
        f.vt = transpose(left);
    } else {
        f.u = std::move(left);
        f.vt = std::move(right_t);
    }
    f.sigma = std::move(sigma);

    // Sign convention: largest-magnitude element of each left singular vector
    // positive (first index on ties).
    for (std::size_t j = 0; j < f.sigma.size(); ++j) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < f.u.rows(); ++i) {
            const double mag = std::abs(f.u(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (f.u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < f.u.rows(); ++i) f.u(i, j) = -f.u(i, j);
            for (std::size_t i = 0; i < f.vt.cols(); ++i) f.vt(j, i) = -f.vt(j, i);
        }
    }
    return f;
}

// Rank-r truncation with the balanced sqrt(sigma) split:
// first = U_r diag(sqrt(sigma)), second = diag(sqrt(sigma)) V^T_r, so
// first*second = U_r Sigma_r V^T_r. r = 0 yields empty factors whose product
// is the zero matrix.
inline std::pair<Matrix2D, Matrix2D> truncate_factors(const SvdFactors& f, std::size_t r) {
    const std::size_t k = f.sigma.size();
    if (r > k)
        throw std::invalid_argument("truncate_factors: rank " + std::to_string(r) +
                                    " exceeds min dimension " + std::to_string(k));
    Matrix2D wa(f.u.rows(), r), wb(r, f.vt.cols());
    for (std::size_t j = 0; j < r; ++j) {
        const double root = std::sqrt(f.sigma[j]);
        for (std::size_t i = 0; i < f.u.rows(); ++i) wa(i, j) = f.u(i, j) * root;
        for (std::size_t i = 0; i < f.vt.cols(); ++i) wb(j, i) = f.vt(j, i) * root;
    }
    return {std::move(wa), std::move(wb)};
}

// Product of a truncation pair; inner dimension 0 gives the zero matrix.
inline Matrix2D low_rank_product(const Matrix2D& wa, const Matrix2D& wb) {
    if (wa.cols() == 0) return Matrix2D(wa.rows(), wb.cols());
    return matmul(wa, wb);
}

inline double spectral_norm(const Matrix2D& m) {
    if (m.size() == 0) return 0.0;
    SvdFactors f = thin_svd(m);
    return f.sigma.empty() ? 0.0 : f.sigma.front();
}

} // namespace icc
