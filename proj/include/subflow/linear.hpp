#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/grid.hpp"

namespace subflow {

/// Symmetric 5-point operator on a structured nx-by-ny grid.
///
/// Only the diagonal and the east/north couplings are stored; the west/south
/// couplings are implied by symmetry, so the matrix cannot be assembled
/// unsymmetrically. east[c] couples cell c=(i,j) with (i+1,j) and is zero in
/// the last column; north[c] couples (i,j) with (i,j+1) and is zero in the
/// last row.
struct LinearSystem {
    int nx = 0;
    int ny = 0;
    std::vector<double> diag;
    std::vector<double> east;
    std::vector<double> north;
    std::vector<double> rhs;

    int size() const { return nx * ny; }

    /// y = A x
    void apply(const std::vector<double>& x, std::vector<double>& y) const {
        const int n = size();
        for (int c = 0; c < n; ++c) {
            y[c] = diag[c] * x[c];
        }
        for (int j = 0; j < ny; ++j) {
            const int row = j * nx;
            for (int i = 0; i + 1 < nx; ++i) {
                const int c = row + i;
                const double t = east[c];
                y[c] += t * x[c + 1];
                y[c + 1] += t * x[c];
            }
        }
        for (int c = 0; c + nx < nx * ny; ++c) {
            const double t = north[c];
            y[c] += t * x[c + nx];
            y[c + nx] += t * x[c];
        }
    }
};

struct SolveOptions {
    double rel_tol = 1e-10;  ///< target relative residual |Ax-b|/|b|
    /// Residual accepted on iteration exhaustion before declaring failure.
    /// Zero means "same as rel_tol". Lets callers request near-roundoff
    /// accuracy without failing when CG stagnates slightly above it.
    double accept_tol = 0.0;
    int max_iters = 0;  ///< 0 -> 10*n
    const std::vector<double>* initial_guess = nullptr;
};

struct SolveStats {
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Conjugate gradients with Jacobi preconditioning.
///
/// Deterministic for fixed inputs: fixed iteration order, no randomization.
/// Throws SolveError when the matrix is not SPD (e.g. an all-sealed boundary
/// leaves the constant null space) or the residual target cannot be met.
inline PressureField solve_linear(const LinearSystem& sys, const SolveOptions& opts,
                                  SolveStats* stats = nullptr) {
    const int n = sys.size();
    PressureField out;
    out.values.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<double>& x = out.values;

    double b_norm2 = 0.0;
    for (double v : sys.rhs) {
        b_norm2 += v * v;
    }
    if (b_norm2 == 0.0) {
        if (stats) {
            *stats = {0, 0.0};
        }
        return out;  // b = 0 -> p = 0
    }
    const double b_norm = std::sqrt(b_norm2);

    std::vector<double> r(sys.rhs);
    if (opts.initial_guess != nullptr) {
        x = *opts.initial_guess;
        std::vector<double> ax(static_cast<std::size_t>(n));
        sys.apply(x, ax);
        for (int c = 0; c < n; ++c) {
            r[c] -= ax[c];
        }
    }

    std::vector<double> inv_diag(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        const double d = sys.diag[c];
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw SolveError("solve_linear: non-positive diagonal entry, matrix is not SPD", 0,
                             std::numeric_limits<double>::quiet_NaN());
        }
        inv_diag[c] = 1.0 / d;
    }

    const double target = opts.rel_tol * b_norm;
    const double accept = (opts.accept_tol > 0.0 ? opts.accept_tol : opts.rel_tol) * b_norm;
    const int max_iters = opts.max_iters > 0 ? opts.max_iters : 10 * n;

    std::vector<double> z(static_cast<std::size_t>(n));
    std::vector<double> p(static_cast<std::size_t>(n));
    std::vector<double> q(static_cast<std::size_t>(n));

    double r_norm = 0.0;
    for (double v : r) {
        r_norm += v * v;
    }
    r_norm = std::sqrt(r_norm);

    std::vector<double> best_x = x;
    double best_res = r_norm;

    if (r_norm <= target) {
        if (stats) {
            *stats = {0, r_norm / b_norm};
        }
        return out;
    }

    for (int c = 0; c < n; ++c) {
        z[c] = inv_diag[c] * r[c];
    }
    p = z;
    double rz = 0.0;
    for (int c = 0; c < n; ++c) {
        rz += r[c] * z[c];
    }

    int it = 0;
    for (it = 1; it <= max_iters; ++it) {
        sys.apply(p, q);
        double pq = 0.0;
        for (int c = 0; c < n; ++c) {
            pq += p[c] * q[c];
        }
        if (!(pq > 0.0) || !std::isfinite(pq)) {
            throw SolveError("solve_linear: conjugate gradients broke down (matrix not SPD?)", it,
                             best_res / b_norm);
        }
        const double alpha = rz / pq;
        for (int c = 0; c < n; ++c) {
            x[c] += alpha * p[c];
            r[c] -= alpha * q[c];
        }
        r_norm = 0.0;
        for (double v : r) {
            r_norm += v * v;
        }
        r_norm = std::sqrt(r_norm);
        if (r_norm < best_res) {
            best_res = r_norm;
            best_x = x;
        }
        if (r_norm <= target) {
            break;
        }
        for (int c = 0; c < n; ++c) {
            z[c] = inv_diag[c] * r[c];
        }
        double rz_next = 0.0;
        for (int c = 0; c < n; ++c) {
            rz_next += r[c] * z[c];
        }
        const double beta = rz_next / rz;
        rz = rz_next;
        for (int c = 0; c < n; ++c) {
            p[c] = z[c] + beta * p[c];
        }
    }

    if (r_norm > target) {
        if (best_res <= accept) {
            x = best_x;
            r_norm = best_res;
        } else {
            throw SolveError("solve_linear: did not converge", std::min(it, max_iters),
                             best_res / b_norm);
        }
    }
    if (stats) {
        *stats = {std::min(it, max_iters), r_norm / b_norm};
    }
    return out;
}

inline PressureField solve_linear(const LinearSystem& sys, SolveStats* stats = nullptr) {
    return solve_linear(sys, SolveOptions{}, stats);
}

}  // namespace subflow
