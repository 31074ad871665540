#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "subflow/errors.hpp"
#include "subflow/grid.hpp"
#include "subflow/rng.hpp"

namespace subflow {

enum class CovarianceKind { exponential, matern };

inline const char* to_string(CovarianceKind k) {
    return k == CovarianceKind::exponential ? "exponential" : "matern";
}

/// Stationary covariance model for the log10-permeability field.
///
/// mean_log_perm and variance are log10(m^2) quantities: the sampled field is
/// K = 10^(mean + fluctuation), so every permeability is strictly positive.
struct GeostatConfig {
    CovarianceKind covariance_kind = CovarianceKind::exponential;
    double correlation_length = 208.0;  ///< [m]
    double variance = 1.0;              ///< (log10 m^2)^2
    double mean_log_perm = -12.0;       ///< log10(m^2)
    int n_modes = 200;
    double matern_smoothness = 1.5;     ///< only used for the Matern kernel

    void validate(const Grid& grid) const {
        std::vector<std::string> issues;
        if (!(correlation_length > 0.0)) {
            issues.push_back("correlation_length must be > 0");
        }
        if (!(variance >= 0.0)) {
            issues.push_back("variance must be >= 0");
        }
        if (n_modes < 1 || n_modes > grid.cells()) {
            issues.push_back("n_modes must lie in [1, nx*ny] = [1, " +
                             std::to_string(grid.cells()) + "]");
        }
        if (!(matern_smoothness > 0.0)) {
            issues.push_back("matern_smoothness must be > 0");
        }
        if (!issues.empty()) {
            throw ConfigError(std::move(issues));
        }
    }
};

/// Covariance value at separation distance r >= 0 [m].
inline double covariance(CovarianceKind kind, double r, double correlation_length, double variance,
                         double matern_smoothness = 1.5) {
    if (r < 0.0 || !std::isfinite(r)) {
        throw std::invalid_argument("covariance: separation distance must be >= 0 and finite");
    }
    if (variance == 0.0) {
        return 0.0;
    }
    if (r == 0.0) {
        return variance;
    }
    switch (kind) {
        case CovarianceKind::exponential:
            return variance * std::exp(-r / correlation_length);
        case CovarianceKind::matern: {
            const double nu = matern_smoothness;
            const double z = std::sqrt(2.0 * nu) * r / correlation_length;
            const double coeff = std::pow(2.0, 1.0 - nu) / std::tgamma(nu);
            return variance * coeff * std::pow(z, nu) * std::cyl_bessel_k(nu, z);
        }
    }
    throw std::invalid_argument("covariance: unknown kind");
}

/// Truncated Karhunen-Loeve basis of the cell-center covariance matrix.
/// Eigenvalues are sorted descending; mode m lives at modes[m*n .. m*n+n).
struct KLBasis {
    int nx = 0;
    int ny = 0;
    int n_modes = 0;
    std::vector<double> eigenvalues;
    std::vector<double> modes;

    const double* mode(int m) const { return modes.data() + static_cast<std::size_t>(m) * nx * ny; }

    /// Variance of the truncated expansion at one cell: sum_m lambda_m v_m^2.
    double truncated_variance(int cell) const {
        double s = 0.0;
        for (int m = 0; m < n_modes; ++m) {
            const double v = mode(m)[cell];
            s += eigenvalues[static_cast<std::size_t>(m)] * v * v;
        }
        return s;
    }
};

/// Dense eigendecomposition of the covariance matrix, truncated to the
/// leading n_modes. At the default 24x24 resolution the matrix is 576x576,
/// well within dense-solver territory.
inline KLBasis build_kl_basis(const Grid& grid, const GeostatConfig& cfg) {
    cfg.validate(grid);
    const int n = grid.cells();

    Eigen::MatrixXd cov(n, n);
    for (int a = 0; a < n; ++a) {
        const double xa = grid.center_x(grid.cell_i(a));
        const double ya = grid.center_y(grid.cell_j(a));
        for (int b = a; b < n; ++b) {
            const double dx = xa - grid.center_x(grid.cell_i(b));
            const double dy = ya - grid.center_y(grid.cell_j(b));
            const double r = std::sqrt(dx * dx + dy * dy);
            const double v = covariance(cfg.covariance_kind, r, cfg.correlation_length,
                                        cfg.variance, cfg.matern_smoothness);
            cov(a, b) = v;
            cov(b, a) = v;
        }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw Error("build_kl_basis: eigendecomposition failed");
    }

    // Eigen returns ascending order; keep the leading n_modes, largest first.
    const Eigen::VectorXd& evals = solver.eigenvalues();
    const Eigen::MatrixXd& evecs = solver.eigenvectors();
    const double lambda_max = std::max(evals(n - 1), 0.0);
    const double negative_floor = -1e-12 * std::max(1.0, lambda_max);

    KLBasis basis;
    basis.nx = grid.nx;
    basis.ny = grid.ny;
    basis.n_modes = cfg.n_modes;
    basis.eigenvalues.resize(static_cast<std::size_t>(cfg.n_modes));
    basis.modes.resize(static_cast<std::size_t>(cfg.n_modes) * n);
    for (int m = 0; m < cfg.n_modes; ++m) {
        const int src = n - 1 - m;
        double lambda = evals(src);
        if (lambda < negative_floor) {
            throw Error("build_kl_basis: covariance matrix has a significantly negative eigenvalue (" +
                        std::to_string(lambda) + ")");
        }
        basis.eigenvalues[static_cast<std::size_t>(m)] = std::max(lambda, 0.0);
        double* dst = basis.modes.data() + static_cast<std::size_t>(m) * n;
        for (int c = 0; c < n; ++c) {
            dst[c] = evecs(c, src);
        }
    }
    return basis;
}

/// Latent Gaussian log10-permeability sample: mean + sum_m sqrt(lambda_m) xi_m v_m
/// with xi_m i.i.d. standard normal from a generator seeded by `seed`.
inline std::vector<double> sample_log_field(const KLBasis& basis, const GeostatConfig& cfg,
                                            std::uint64_t seed) {
    const int n = basis.nx * basis.ny;
    std::vector<double> log_k(static_cast<std::size_t>(n), cfg.mean_log_perm);
    GaussianSampler gauss(seed);
    for (int m = 0; m < basis.n_modes; ++m) {
        const double xi = gauss.next();
        const double scale = std::sqrt(basis.eigenvalues[static_cast<std::size_t>(m)]) * xi;
        if (scale == 0.0) {
            continue;
        }
        const double* v = basis.mode(m);
        for (int c = 0; c < n; ++c) {
            log_k[static_cast<std::size_t>(c)] += scale * v[c];
        }
    }
    return log_k;
}

inline PermeabilityField sample_field(const KLBasis& basis, const GeostatConfig& cfg,
                                      std::uint64_t seed) {
    PermeabilityField field;
    field.values = sample_log_field(basis, cfg, seed);
    for (double& v : field.values) {
        v = std::pow(10.0, v);
    }
    return field;
}

}  // namespace subflow
