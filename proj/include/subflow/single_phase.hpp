#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "subflow/fvm.hpp"
#include "subflow/grid.hpp"
#include "subflow/linear.hpp"

namespace subflow {

/// Injection well, extraction well and the critical monitoring cell, all as
/// cell-centered rate sources (no wellbore model).
struct WellSet {
    int injection_cell = -1;
    int extraction_cell = -1;
    int critical_cell = -1;
    double injection_rate = 0.0;  ///< [m^3/s], held constant during operation

    void validate(const Grid& grid) const {
        auto check = [&grid](int cell, const char* name) {
            if (cell < 0 || cell >= grid.cells()) {
                throw std::invalid_argument(std::string("WellSet: ") + name +
                                            " cell index out of range: " + std::to_string(cell));
            }
        };
        check(injection_cell, "injection");
        check(extraction_cell, "extraction");
        check(critical_cell, "critical");
        if (injection_cell == extraction_cell || injection_cell == critical_cell ||
            extraction_cell == critical_cell) {
            throw std::invalid_argument("WellSet: injection, extraction and critical cells must be distinct");
        }
        if (!std::isfinite(injection_rate)) {
            throw std::invalid_argument("WellSet: injection rate must be finite");
        }
    }
};

inline WellSet make_wells(const Grid& grid, int inj_i, int inj_j, int ext_i, int ext_j, int crit_i,
                          int crit_j, double injection_rate) {
    auto in_range = [&grid](int i, int j, const char* name) {
        if (!grid.contains(i, j)) {
            throw std::invalid_argument(std::string("make_wells: ") + name + " cell (" +
                                        std::to_string(i) + "," + std::to_string(j) +
                                        ") outside the grid");
        }
    };
    in_range(inj_i, inj_j, "injection");
    in_range(ext_i, ext_j, "extraction");
    in_range(crit_i, crit_j, "critical");
    WellSet w;
    w.injection_cell = grid.index(inj_i, inj_j);
    w.extraction_cell = grid.index(ext_i, ext_j);
    w.critical_cell = grid.index(crit_i, crit_j);
    w.injection_rate = injection_rate;
    w.validate(grid);
    return w;
}

/// Cell source vector for the well pair: +injection_rate at the injector,
/// -extraction_rate at the extractor.
inline SourceField well_sources(const Grid& grid, const WellSet& wells, double extraction_rate) {
    if (!std::isfinite(extraction_rate)) {
        throw std::invalid_argument("well_sources: extraction rate must be finite");
    }
    SourceField q;
    q.values.assign(static_cast<std::size_t>(grid.cells()), 0.0);
    q.values[wells.injection_cell] += wells.injection_rate;
    q.values[wells.extraction_cell] -= extraction_rate;
    return q;
}

/// Steady incompressible single-phase pressure problem with unit mobility
/// and a uniform Dirichlet pressure on the outer boundary.
struct SinglePhaseProblem {
    Grid grid;
    PermeabilityField perm;
    WellSet wells;
    double bc_pressure = 0.0;

    void validate() const {
        require_cell_array(grid, perm.values, "SinglePhaseProblem: permeability");
        wells.validate(grid);
        if (!std::isfinite(bc_pressure)) {
            throw std::invalid_argument("SinglePhaseProblem: boundary pressure must be finite");
        }
    }
};

inline LinearSystem steady_system(const SinglePhaseProblem& problem, double extraction_rate) {
    problem.validate();
    const std::vector<double> unit_mobility(static_cast<std::size_t>(problem.grid.cells()), 1.0);
    return assemble_pressure_system(problem.grid, problem.perm, unit_mobility,
                                    well_sources(problem.grid, problem.wells, extraction_rate),
                                    problem.bc_pressure);
}

inline PressureField solve_steady(const SinglePhaseProblem& problem, double extraction_rate,
                                  SolveStats* stats = nullptr) {
    SolveOptions opts;
    opts.rel_tol = 1e-12;  // comfortably below the 1e-10 contract
    opts.accept_tol = 1e-10;
    return solve_linear(steady_system(problem, extraction_rate), opts, stats);
}

inline double critical_pressure(const SinglePhaseProblem& problem, double extraction_rate) {
    return solve_steady(problem, extraction_rate).values[problem.wells.critical_cell];
}

/// d(critical pressure)/d(extraction rate), scaled by seed_gradient.
///
/// One adjoint solve: A w = e_crit (A is symmetric), then the only
/// rate-dependent entry of the right-hand side gives d p_crit/dq = -w[ext].
/// The steady problem is affine in the rate, so the result is independent of
/// extraction_rate; the argument is kept to mirror the forward signature.
inline double gradient_steady(const SinglePhaseProblem& problem, double /*extraction_rate*/,
                              double seed_gradient = 1.0) {
    problem.validate();
    LinearSystem adj = steady_system(problem, 0.0);
    adj.rhs.assign(adj.rhs.size(), 0.0);
    adj.rhs[problem.wells.critical_cell] = 1.0;
    SolveOptions opts;
    opts.rel_tol = 1e-12;
    opts.accept_tol = 1e-10;
    const PressureField w = solve_linear(adj, opts);
    return seed_gradient * (-w.values[problem.wells.extraction_cell]);
}

}  // namespace subflow
