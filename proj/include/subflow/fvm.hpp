#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "subflow/grid.hpp"
#include "subflow/linear.hpp"

namespace subflow {

enum class BoundaryKind { dirichlet, sealed };

struct SideCondition {
    BoundaryKind kind = BoundaryKind::dirichlet;
    double pressure = 0.0;  ///< Dirichlet value [Pa]; ignored for sealed sides
};

/// Outer boundary conditions per side. The production configuration is a
/// uniform Dirichlet pressure on all four sides; sealed sides exist for
/// column tests and degenerate setups.
struct BoundaryConditions {
    SideCondition left, right, bottom, top;

    static BoundaryConditions uniform_dirichlet(double pressure) {
        BoundaryConditions bc;
        bc.left = bc.right = bc.bottom = bc.top = {BoundaryKind::dirichlet, pressure};
        return bc;
    }
    static BoundaryConditions all_sealed() {
        BoundaryConditions bc;
        bc.left = bc.right = bc.bottom = bc.top = {BoundaryKind::sealed, 0.0};
        return bc;
    }
};

/// Two-point flux transmissibilities on every face of the grid, oriented +x
/// and +y.
///
/// x faces: (nx+1)*ny values, x[j*(nx+1)+i] sits between cells (i-1,j) and
/// (i,j); i=0 and i=nx are boundary faces. y faces: nx*(ny+1) values,
/// y[j*nx+i] sits between (i,j-1) and (i,j). Interior faces carry the
/// harmonic mean of the two cell permeability-mobility products scaled by
/// face_area/center_distance; boundary faces use the one-sided half-cell
/// distance.
struct FaceCoefficients {
    int nx = 0;
    int ny = 0;
    std::vector<double> x;
    std::vector<double> y;

    int x_index(int i, int j) const { return j * (nx + 1) + i; }
    int y_index(int i, int j) const { return j * nx + i; }
};

/// Signed face volumetric fluxes [m^3/s], same layout and orientation as
/// FaceCoefficients: positive means flow toward +x (resp. +y). Storing one
/// value per oriented face makes the pairwise antisymmetry structural.
struct FluxField {
    int nx = 0;
    int ny = 0;
    std::vector<double> x;
    std::vector<double> y;

    int x_index(int i, int j) const { return j * (nx + 1) + i; }
    int y_index(int i, int j) const { return j * nx + i; }
};

namespace detail {

inline double harmonic_pair(double a, double b) { return 2.0 * a * b / (a + b); }

inline void check_positive(const std::vector<double>& v, const char* what) {
    for (std::size_t c = 0; c < v.size(); ++c) {
        if (!(v[c] > 0.0) || !std::isfinite(v[c])) {
            throw std::invalid_argument(std::string(what) + ": entry " + std::to_string(c) +
                                        " must be positive and finite");
        }
    }
}

}  // namespace detail

/// Face transmissibilities for per-cell permeability and mobility.
/// mobility[c] multiplies perm[c]; pass all-ones for unit mobility.
inline FaceCoefficients transmissibilities(const Grid& grid, const PermeabilityField& perm,
                                           const std::vector<double>& mobility) {
    require_cell_array(grid, perm.values, "transmissibilities: permeability");
    require_cell_array(grid, mobility, "transmissibilities: mobility");
    detail::check_positive(perm.values, "transmissibilities: permeability");
    detail::check_positive(mobility, "transmissibilities: mobility");

    const int nx = grid.nx;
    const int ny = grid.ny;
    FaceCoefficients f;
    f.nx = nx;
    f.ny = ny;
    f.x.assign(static_cast<std::size_t>((nx + 1) * ny), 0.0);
    f.y.assign(static_cast<std::size_t>(nx * (ny + 1)), 0.0);

    const double geom_x = grid.dy / grid.dx;  // face area (dy*1m) over distance dx
    const double geom_y = grid.dx / grid.dy;

    std::vector<double> m(static_cast<std::size_t>(grid.cells()));
    for (int c = 0; c < grid.cells(); ++c) {
        m[c] = perm.values[c] * mobility[c];
    }

    for (int j = 0; j < ny; ++j) {
        f.x[f.x_index(0, j)] = 2.0 * geom_x * m[grid.index(0, j)];
        f.x[f.x_index(nx, j)] = 2.0 * geom_x * m[grid.index(nx - 1, j)];
        for (int i = 1; i < nx; ++i) {
            f.x[f.x_index(i, j)] =
                geom_x * detail::harmonic_pair(m[grid.index(i - 1, j)], m[grid.index(i, j)]);
        }
    }
    for (int i = 0; i < nx; ++i) {
        f.y[f.y_index(i, 0)] = 2.0 * geom_y * m[grid.index(i, 0)];
        f.y[f.y_index(i, ny)] = 2.0 * geom_y * m[grid.index(i, ny - 1)];
        for (int j = 1; j < ny; ++j) {
            f.y[f.y_index(i, j)] =
                geom_y * detail::harmonic_pair(m[grid.index(i, j - 1)], m[grid.index(i, j)]);
        }
    }
    return f;
}

/// Assemble the finite-volume pressure system sum_f T_f (p_c - p_nbr) = Q_c.
/// Dirichlet sides couple through the boundary-face transmissibility (ghost
/// value at half-cell distance), which keeps the matrix SPD; sealed sides
/// contribute nothing.
inline LinearSystem assemble_pressure_system(const Grid& grid, const FaceCoefficients& trans,
                                             const SourceField& sources,
                                             const BoundaryConditions& bc) {
    require_cell_array(grid, sources.values, "assemble_pressure_system: sources");
    const int nx = grid.nx;
    const int ny = grid.ny;

    LinearSystem sys;
    sys.nx = nx;
    sys.ny = ny;
    sys.diag.assign(static_cast<std::size_t>(grid.cells()), 0.0);
    sys.east.assign(static_cast<std::size_t>(grid.cells()), 0.0);
    sys.north.assign(static_cast<std::size_t>(grid.cells()), 0.0);
    sys.rhs = sources.values;

    for (int j = 0; j < ny; ++j) {
        for (int i = 1; i < nx; ++i) {
            const double t = trans.x[trans.x_index(i, j)];
            const int a = grid.index(i - 1, j);
            const int b = grid.index(i, j);
            sys.diag[a] += t;
            sys.diag[b] += t;
            sys.east[a] = -t;
        }
    }
    for (int i = 0; i < nx; ++i) {
        for (int j = 1; j < ny; ++j) {
            const double t = trans.y[trans.y_index(i, j)];
            const int a = grid.index(i, j - 1);
            const int b = grid.index(i, j);
            sys.diag[a] += t;
            sys.diag[b] += t;
            sys.north[a] = -t;
        }
    }

    auto add_dirichlet = [&sys](int cell, double t, const SideCondition& side) {
        if (side.kind == BoundaryKind::dirichlet) {
            sys.diag[cell] += t;
            sys.rhs[cell] += t * side.pressure;
        }
    };
    for (int j = 0; j < ny; ++j) {
        add_dirichlet(grid.index(0, j), trans.x[trans.x_index(0, j)], bc.left);
        add_dirichlet(grid.index(nx - 1, j), trans.x[trans.x_index(nx, j)], bc.right);
    }
    for (int i = 0; i < nx; ++i) {
        add_dirichlet(grid.index(i, 0), trans.y[trans.y_index(i, 0)], bc.bottom);
        add_dirichlet(grid.index(i, ny - 1), trans.y[trans.y_index(i, ny)], bc.top);
    }
    return sys;
}

inline LinearSystem assemble_pressure_system(const Grid& grid, const PermeabilityField& perm,
                                             const std::vector<double>& mobility,
                                             const SourceField& sources, double bc_pressure) {
    const FaceCoefficients trans = transmissibilities(grid, perm, mobility);
    return assemble_pressure_system(grid, trans, sources,
                                    BoundaryConditions::uniform_dirichlet(bc_pressure));
}

/// Darcy fluxes across every face from a pressure solution. Positive flux
/// points toward +x (resp. +y); boundary fluxes use the Dirichlet ghost
/// pressure, sealed faces carry zero.
inline FluxField face_fluxes(const Grid& grid, const FaceCoefficients& trans,
                             const PressureField& pressure, const BoundaryConditions& bc) {
    require_cell_array(grid, pressure.values, "face_fluxes: pressure");
    const int nx = grid.nx;
    const int ny = grid.ny;
    const std::vector<double>& p = pressure.values;

    FluxField v;
    v.nx = nx;
    v.ny = ny;
    v.x.assign(trans.x.size(), 0.0);
    v.y.assign(trans.y.size(), 0.0);

    for (int j = 0; j < ny; ++j) {
        if (bc.left.kind == BoundaryKind::dirichlet) {
            const int f = v.x_index(0, j);
            v.x[f] = trans.x[f] * (bc.left.pressure - p[grid.index(0, j)]);
        }
        if (bc.right.kind == BoundaryKind::dirichlet) {
            const int f = v.x_index(nx, j);
            v.x[f] = trans.x[f] * (p[grid.index(nx - 1, j)] - bc.right.pressure);
        }
        for (int i = 1; i < nx; ++i) {
            const int f = v.x_index(i, j);
            v.x[f] = trans.x[f] * (p[grid.index(i - 1, j)] - p[grid.index(i, j)]);
        }
    }
    for (int i = 0; i < nx; ++i) {
        if (bc.bottom.kind == BoundaryKind::dirichlet) {
            const int f = v.y_index(i, 0);
            v.y[f] = trans.y[f] * (bc.bottom.pressure - p[grid.index(i, 0)]);
        }
        if (bc.top.kind == BoundaryKind::dirichlet) {
            const int f = v.y_index(i, ny);
            v.y[f] = trans.y[f] * (p[grid.index(i, ny - 1)] - bc.top.pressure);
        }
        for (int j = 1; j < ny; ++j) {
            const int f = v.y_index(i, j);
            v.y[f] = trans.y[f] * (p[grid.index(i, j - 1)] - p[grid.index(i, j)]);
        }
    }
    return v;
}

/// Net outflow of cell c minus its source; zero (to solver tolerance) when
/// the pressure system is solved exactly.
inline double cell_flux_imbalance(const Grid& grid, const FluxField& v, const SourceField& sources,
                                  int i, int j) {
    const double outflow = v.x[v.x_index(i + 1, j)] - v.x[v.x_index(i, j)] +
                           v.y[v.y_index(i, j + 1)] - v.y[v.y_index(i, j)];
    return outflow - sources.values[grid.index(i, j)];
}

}  // namespace subflow
