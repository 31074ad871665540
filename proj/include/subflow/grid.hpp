#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace subflow {

/// 2D Cartesian cell-centered grid with unit thickness in the third
/// dimension. Cells are addressed either by (i, j) with i along x and j
/// along y, or by the flat row-major index j*nx + i (x varies fastest).
struct Grid {
    int nx = 0;
    int ny = 0;
    double lx = 0.0;  ///< domain extent in x [m]
    double ly = 0.0;  ///< domain extent in y [m]
    double dx = 0.0;  ///< cell size in x [m]
    double dy = 0.0;  ///< cell size in y [m]
    double cell_volume = 0.0;  ///< dx*dy*1m [m^3]

    int cells() const { return nx * ny; }
    int index(int i, int j) const { return j * nx + i; }
    int cell_i(int index) const { return index % nx; }
    int cell_j(int index) const { return index / nx; }
    bool contains(int i, int j) const { return i >= 0 && i < nx && j >= 0 && j < ny; }

    /// Cell-center coordinates [m].
    double center_x(int i) const { return (i + 0.5) * dx; }
    double center_y(int j) const { return (j + 0.5) * dy; }
};

inline Grid build_grid(int nx, int ny, double lx, double ly) {
    if (nx < 3 || ny < 3) {
        throw std::invalid_argument("build_grid: nx and ny must be >= 3 (got " +
                                    std::to_string(nx) + "x" + std::to_string(ny) + ")");
    }
    if (!(lx > 0.0) || !(ly > 0.0) || !std::isfinite(lx) || !std::isfinite(ly)) {
        throw std::invalid_argument("build_grid: domain extents must be positive and finite");
    }
    Grid g;
    g.nx = nx;
    g.ny = ny;
    g.lx = lx;
    g.ly = ly;
    g.dx = lx / nx;
    g.dy = ly / ny;
    g.cell_volume = g.dx * g.dy;  // unit thickness
    return g;
}

/// Per-cell isotropic permeability [m^2], flat row-major storage.
struct PermeabilityField {
    std::vector<double> values;
};

/// Per-cell volumetric source/sink rate [m^3/s]; positive injects.
struct SourceField {
    std::vector<double> values;
};

/// Per-cell pressure [Pa].
struct PressureField {
    std::vector<double> values;
};

/// Per-cell wetting-phase saturation, each value in [0, 1].
struct SaturationField {
    std::vector<double> values;
};

inline void require_cell_array(const Grid& grid, const std::vector<double>& values,
                               const char* what) {
    if (static_cast<int>(values.size()) != grid.cells()) {
        throw std::invalid_argument(std::string(what) + ": expected " +
                                    std::to_string(grid.cells()) + " cell values, got " +
                                    std::to_string(values.size()));
    }
}

}  // namespace subflow
