#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/fvm.hpp"
#include "subflow/grid.hpp"
#include "subflow/io.hpp"
#include "subflow/linear.hpp"
#include "subflow/single_phase.hpp"

namespace subflow {

/// Incompressible, immiscible two-phase fluid description with quadratic
/// relative permeabilities. Saturations refer to the wetting phase.
struct FluidProps {
    double mu_w = 1.0;      ///< wetting-phase viscosity [Pa s]
    double mu_nw = 1.0;     ///< non-wetting-phase viscosity [Pa s]
    double s_wc = 0.0;      ///< connate (immobile) wetting saturation
    double s_nwr = 0.0;     ///< irreducible non-wetting saturation
    double porosity = 1.0;
    double rho_w = 1.0;     ///< wetting density [kg/m^3]; volumetric sources absorb it

    void validate() const {
        if (!(mu_w > 0.0) || !(mu_nw > 0.0)) {
            throw std::invalid_argument("FluidProps: viscosities must be positive");
        }
        if (s_wc < 0.0 || s_nwr < 0.0 || s_wc + s_nwr >= 1.0) {
            throw std::invalid_argument("FluidProps: need s_wc, s_nwr >= 0 and s_wc + s_nwr < 1");
        }
        if (!(porosity > 0.0) || porosity > 1.0) {
            throw std::invalid_argument("FluidProps: porosity must lie in (0, 1]");
        }
        if (!(rho_w > 0.0)) {
            throw std::invalid_argument("FluidProps: rho_w must be positive");
        }
    }

    double mobile_range() const { return 1.0 - s_wc - s_nwr; }
};

namespace detail {

// Saturations may legitimately carry O(1e-13) overshoot from a previous
// explicit step; reject only violations beyond that slack.
constexpr double kSaturationGuard = 1e-9;

inline void check_saturation(double s) {
    if (!(s >= -kSaturationGuard && s <= 1.0 + kSaturationGuard)) {
        throw std::invalid_argument("saturation outside [0,1]: " + std::to_string(s));
    }
}

}  // namespace detail

/// Normalized (effective) saturation s* = (s - s_wc)/(1 - s_nwr - s_wc),
/// clamped to [0, 1].
inline double normalized_saturation(double s, const FluidProps& props) {
    detail::check_saturation(s);
    const double sn = (s - props.s_wc) / props.mobile_range();
    return std::clamp(sn, 0.0, 1.0);
}

/// d s*/d s; zero where the clamp is active.
inline double d_normalized_saturation(double s, const FluidProps& props) {
    const double sn = (s - props.s_wc) / props.mobile_range();
    if (sn <= 0.0 || sn >= 1.0) {
        return 0.0;
    }
    return 1.0 / props.mobile_range();
}

inline double mobility_w(double s, const FluidProps& props) {
    const double sn = normalized_saturation(s, props);
    return sn * sn / props.mu_w;
}

inline double mobility_nw(double s, const FluidProps& props) {
    const double sn = normalized_saturation(s, props);
    return (1.0 - sn) * (1.0 - sn) / props.mu_nw;
}

inline double total_mobility(double s, const FluidProps& props) {
    return mobility_w(s, props) + mobility_nw(s, props);
}

inline double d_total_mobility(double s, const FluidProps& props) {
    const double sn = normalized_saturation(s, props);
    const double dsn = d_normalized_saturation(s, props);
    return (2.0 * sn / props.mu_w - 2.0 * (1.0 - sn) / props.mu_nw) * dsn;
}

/// Wetting-phase fractional flow f = lambda_w / (lambda_w + lambda_nw).
inline double fractional_flow(double s, const FluidProps& props) {
    const double lw = mobility_w(s, props);
    const double lnw = mobility_nw(s, props);
    return lw / (lw + lnw);
}

inline double d_fractional_flow(double s, const FluidProps& props) {
    const double sn = normalized_saturation(s, props);
    const double dsn = d_normalized_saturation(s, props);
    const double lw = sn * sn / props.mu_w;
    const double lnw = (1.0 - sn) * (1.0 - sn) / props.mu_nw;
    const double dlw = 2.0 * sn / props.mu_w;
    const double dlnw = -2.0 * (1.0 - sn) / props.mu_nw;
    const double tot = lw + lnw;
    return (dlw * lnw - lw * dlnw) / (tot * tot) * dsn;
}

/// Maximum of |df/d s*| over the normalized saturation range. Equals 2 at
/// equal viscosities; otherwise scanned on a 1e-3 grid of the closed-form
/// derivative.
inline double max_fractional_flow_slope(const FluidProps& props) {
    if (props.mu_w == props.mu_nw) {
        return 2.0;
    }
    FluidProps unit = props;
    unit.s_wc = 0.0;
    unit.s_nwr = 0.0;
    double best = 0.0;
    for (int k = 0; k <= 1000; ++k) {
        const double sn = static_cast<double>(k) * 1e-3;
        best = std::max(best, std::abs(d_fractional_flow(sn, unit)));
    }
    return best;
}

/// Transient two-phase problem: grid, permeability, wells, fluids and the
/// explicit-transport safety factor.
struct TwoPhaseProblem {
    Grid grid;
    PermeabilityField perm;
    WellSet wells;
    FluidProps props;
    double bc_pressure = 0.0;
    double cfl_factor = 0.9;
    int max_steps = 100000;

    void validate() const {
        require_cell_array(grid, perm.values, "TwoPhaseProblem: permeability");
        wells.validate(grid);
        props.validate();
        if (!(cfl_factor > 0.0) || cfl_factor > 1.0) {
            throw std::invalid_argument("TwoPhaseProblem: cfl_factor must lie in (0, 1]");
        }
        if (max_steps < 1) {
            throw std::invalid_argument("TwoPhaseProblem: max_steps must be >= 1");
        }
    }
};

struct PressureStepResult {
    PressureField pressure;
    FluxField flux;
    SolveStats stats;
};

namespace detail {

// IMPES pressure solves run well below the general 1e-10 contract: the
// explicit saturation update inherits the flux imbalance of the solve, and
// the [0,1] bound slack is only 1e-12.
inline SolveOptions impes_solve_options() {
    SolveOptions opts;
    opts.rel_tol = 1e-13;
    opts.accept_tol = 1e-11;
    return opts;
}

inline std::vector<double> total_mobility_field(const std::vector<double>& saturation,
                                                const FluidProps& props) {
    std::vector<double> mob(saturation.size());
    for (std::size_t c = 0; c < saturation.size(); ++c) {
        const double m = total_mobility(saturation[c], props);
        if (!(m > 0.0)) {
            throw Error("impes_pressure_step: zero total mobility at cell " + std::to_string(c));
        }
        mob[c] = m;
    }
    return mob;
}

}  // namespace detail

/// Implicit pressure stage: assemble with saturation-dependent total
/// mobility, solve, and evaluate the total-velocity face fluxes.
inline PressureStepResult impes_pressure_step(const Grid& grid, const PermeabilityField& perm,
                                              const SaturationField& saturation,
                                              const WellSet& wells, double extraction_rate,
                                              const FluidProps& props, double bc_pressure,
                                              const PressureField* warm_start = nullptr) {
    require_cell_array(grid, saturation.values, "impes_pressure_step: saturation");
    const std::vector<double> mobility = detail::total_mobility_field(saturation.values, props);
    const FaceCoefficients trans = transmissibilities(grid, perm, mobility);
    const BoundaryConditions bc = BoundaryConditions::uniform_dirichlet(bc_pressure);
    LinearSystem sys =
        assemble_pressure_system(grid, trans, well_sources(grid, wells, extraction_rate), bc);

    SolveOptions opts = detail::impes_solve_options();
    if (warm_start != nullptr && warm_start->values.size() == static_cast<std::size_t>(grid.cells())) {
        opts.initial_guess = &warm_start->values;
    }
    PressureStepResult out;
    out.pressure = solve_linear(sys, opts, &out.stats);
    out.flux = face_fluxes(grid, trans, out.pressure, bc);
    return out;
}

/// CFL-limited timestep for the explicit saturation update:
/// dt = cfl_factor * min_c [ phi V_c (1 - s_wc - s_nwr) / (influx_c * max|f'|) ],
/// truncated to the remaining horizon. influx_c counts face inflows and the
/// positive part of the cell source. No positive influx anywhere means the
/// transport is inactive and the remaining horizon is returned.
inline double cfl_timestep(const Grid& grid, const FluxField& fluxes, const SourceField& sources,
                           const FluidProps& props, double cfl_factor, double remaining_horizon) {
    require_cell_array(grid, sources.values, "cfl_timestep: sources");
    if (!(remaining_horizon > 0.0)) {
        throw std::invalid_argument("cfl_timestep: remaining horizon must be > 0");
    }
    const int nx = grid.nx;
    const int ny = grid.ny;

    std::vector<double> influx(static_cast<std::size_t>(grid.cells()), 0.0);
    for (int c = 0; c < grid.cells(); ++c) {
        influx[c] = std::max(sources.values[c], 0.0);
    }
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            const double v = fluxes.x[fluxes.x_index(i, j)];
            if (v > 0.0 && i < nx) {
                influx[grid.index(i, j)] += v;  // entering the +x side cell
            } else if (v < 0.0 && i > 0) {
                influx[grid.index(i - 1, j)] -= v;
            }
        }
    }
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j <= ny; ++j) {
            const double v = fluxes.y[fluxes.y_index(i, j)];
            if (v > 0.0 && j < ny) {
                influx[grid.index(i, j)] += v;
            } else if (v < 0.0 && j > 0) {
                influx[grid.index(i, j - 1)] -= v;
            }
        }
    }

    const double max_slope = max_fractional_flow_slope(props);
    const double pore_factor = props.porosity * grid.cell_volume * props.mobile_range();
    double bound = std::numeric_limits<double>::infinity();
    for (int c = 0; c < grid.cells(); ++c) {
        if (influx[c] > 0.0) {
            bound = std::min(bound, pore_factor / (influx[c] * max_slope));
        }
    }
    if (!std::isfinite(bound)) {
        return remaining_horizon;
    }
    return std::min(cfl_factor * bound, remaining_horizon);
}

/// Explicit donor-cell upwind saturation update.
///
/// s_c' = s_c + dt/(phi V_c) * ( max(q_c,0) + f(s_c) min(q_c,0) - net wetting outflow ),
/// where each face carries f evaluated at its upstream (donor) cell and
/// inflow across the Dirichlet boundary carries the exterior saturation 0.
/// Results are not clamped; landing outside [0,1] by more than 1e-12 is a
/// CFL violation and throws.
inline SaturationField saturation_step(const SaturationField& saturation, const FluxField& fluxes,
                                       const SourceField& sources, double dt, const Grid& grid,
                                       const FluidProps& props) {
    require_cell_array(grid, saturation.values, "saturation_step: saturation");
    require_cell_array(grid, sources.values, "saturation_step: sources");
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw std::invalid_argument("saturation_step: dt must be positive and finite");
    }
    const int nx = grid.nx;
    const int ny = grid.ny;
    const std::vector<double>& s = saturation.values;

    std::vector<double> frac(s.size());
    for (std::size_t c = 0; c < s.size(); ++c) {
        frac[c] = fractional_flow(s[c], props);
    }

    // Net wetting-phase outflow per cell; donor value is zero for inflow
    // entering through the outer boundary.
    std::vector<double> wetting_out(s.size(), 0.0);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            const double v = fluxes.x[fluxes.x_index(i, j)];
            if (v == 0.0) {
                continue;
            }
            const int lo = i > 0 ? grid.index(i - 1, j) : -1;
            const int hi = i < nx ? grid.index(i, j) : -1;
            const int donor = v >= 0.0 ? lo : hi;
            const double fw = donor >= 0 ? frac[donor] * v : 0.0;
            if (lo >= 0) {
                wetting_out[lo] += fw;
            }
            if (hi >= 0) {
                wetting_out[hi] -= fw;
            }
        }
    }
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j <= ny; ++j) {
            const double v = fluxes.y[fluxes.y_index(i, j)];
            if (v == 0.0) {
                continue;
            }
            const int lo = j > 0 ? grid.index(i, j - 1) : -1;
            const int hi = j < ny ? grid.index(i, j) : -1;
            const int donor = v >= 0.0 ? lo : hi;
            const double fw = donor >= 0 ? frac[donor] * v : 0.0;
            if (lo >= 0) {
                wetting_out[lo] += fw;
            }
            if (hi >= 0) {
                wetting_out[hi] -= fw;
            }
        }
    }

    SaturationField next;
    next.values.resize(s.size());
    for (int c = 0; c < grid.cells(); ++c) {
        const double q = sources.values[c];
        const double wetting_in = std::max(q, 0.0) + frac[c] * std::min(q, 0.0) - wetting_out[c];
        const double sc = s[c] + dt / (props.porosity * grid.cell_volume) * wetting_in;
        if (sc < -1e-12 || sc > 1.0 + 1e-12) {
            throw CflError("saturation_step: update left [0,1], timestep violates the CFL bound",
                           c, sc);
        }
        next.values[c] = sc;
    }
    return next;
}

/// One record per completed IMPES step: the state entering the step and the
/// step's pressure solution, face fluxes and timestep. Needed by the
/// reverse-mode gradient.
struct StepRecord {
    SaturationField saturation;
    PressureField pressure;
    FluxField flux;
    double dt = 0.0;
};

struct SimulationTrace {
    std::vector<StepRecord> steps;
    SaturationField final_saturation;
    PressureField final_pressure;

    std::vector<double> timestep_schedule() const {
        std::vector<double> dts;
        dts.reserve(steps.size());
        for (const auto& rec : steps) {
            dts.push_back(rec.dt);
        }
        return dts;
    }
};

/// Explicit list of timesteps summing to the simulated horizon.
struct TimeStepSchedule {
    std::vector<double> dts;
    double cfl_factor = 0.0;

    double horizon() const {
        double t = 0.0;
        for (double dt : dts) {
            t += dt;
        }
        return t;
    }
};

inline TimeStepSchedule schedule_from_trace(const SimulationTrace& trace, double cfl_factor) {
    return TimeStepSchedule{trace.timestep_schedule(), cfl_factor};
}

/// Debug dump of a simulation trace. Text header, then per step the timestep
/// followed by the entering saturation, the pressure solution and the x/y
/// face fluxes, all little-endian 64-bit floats; the terminal saturation and
/// pressure close the file.
inline void save_trace(const std::string& path, const Grid& grid, const SimulationTrace& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("save_trace: cannot open '" + path + "'");
    }
    out << "SUBFLOW-TRACE v1\n";
    out << "nx " << grid.nx << "\n";
    out << "ny " << grid.ny << "\n";
    out << "steps " << trace.steps.size() << "\n";
    out << "BINARY\n";
    auto dump = [&out](const std::vector<double>& v) {
        for (double x : v) {
            detail::write_f64_le(out, x);
        }
    };
    for (const auto& rec : trace.steps) {
        detail::write_f64_le(out, rec.dt);
        dump(rec.saturation.values);
        dump(rec.pressure.values);
        dump(rec.flux.x);
        dump(rec.flux.y);
    }
    dump(trace.final_saturation.values);
    dump(trace.final_pressure.values);
    if (!out) {
        throw Error("save_trace: write failed for '" + path + "'");
    }
}

struct MultiphaseResult {
    double critical_pressure = 0.0;  ///< terminal pressure at the critical cell [Pa]
    SimulationTrace trace;
};

namespace detail {

template <typename NextTimestep>
MultiphaseResult run_impes(const TwoPhaseProblem& problem, double extraction_rate, double horizon,
                           const SaturationField& initial_saturation, bool keep_trace,
                           NextTimestep&& next_dt) {
    problem.validate();
    require_cell_array(problem.grid, initial_saturation.values, "simulate: initial saturation");
    for (double s : initial_saturation.values) {
        check_saturation(s);
    }
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) {
        throw std::invalid_argument("simulate: horizon must be >= 0 and finite");
    }

    const SourceField sources = well_sources(problem.grid, problem.wells, extraction_rate);
    MultiphaseResult result;
    SaturationField s = initial_saturation;
    PressureField last_pressure;

    double t = 0.0;
    int step = 0;
    while (t < horizon * (1.0 - 1e-12)) {
        if (step >= problem.max_steps) {
            throw Error("simulate: step cap exceeded (" + std::to_string(problem.max_steps) +
                        " steps, t=" + std::to_string(t) + " of " + std::to_string(horizon) + " s)");
        }
        PressureStepResult ps =
            impes_pressure_step(problem.grid, problem.perm, s, problem.wells, extraction_rate,
                                problem.props, problem.bc_pressure,
                                last_pressure.values.empty() ? nullptr : &last_pressure);
        const double dt = next_dt(step, ps.flux, sources, horizon - t);
        SaturationField s_next =
            saturation_step(s, ps.flux, sources, dt, problem.grid, problem.props);
        if (keep_trace) {
            result.trace.steps.push_back(StepRecord{s, std::move(ps.pressure), std::move(ps.flux), dt});
            last_pressure = result.trace.steps.back().pressure;
        } else {
            last_pressure = std::move(ps.pressure);
        }
        s = std::move(s_next);
        t += dt;
        ++step;
    }

    // Terminal readout: the pressure field consistent with the saturation at
    // time T.
    PressureStepResult final_ps =
        impes_pressure_step(problem.grid, problem.perm, s, problem.wells, extraction_rate,
                            problem.props, problem.bc_pressure,
                            last_pressure.values.empty() ? nullptr : &last_pressure);
    result.critical_pressure = final_ps.pressure.values[problem.wells.critical_cell];
    result.trace.final_saturation = std::move(s);
    result.trace.final_pressure = std::move(final_ps.pressure);
    return result;
}

}  // namespace detail

/// Sequential IMPES loop with CFL-adaptive timesteps until the horizon is
/// reached. Returns the terminal critical-cell pressure and the trace needed
/// for the reverse pass.
inline MultiphaseResult simulate_multiphase(const TwoPhaseProblem& problem, double extraction_rate,
                                            double horizon,
                                            const SaturationField& initial_saturation,
                                            bool keep_trace = true) {
    return detail::run_impes(problem, extraction_rate, horizon, initial_saturation, keep_trace,
                             [&](int, const FluxField& flux, const SourceField& sources,
                                 double remaining) {
                                 return cfl_timestep(problem.grid, flux, sources, problem.props,
                                                     problem.cfl_factor, remaining);
                             });
}

/// IMPES loop with a prescribed timestep schedule (no CFL adaptation). Used
/// to evaluate finite-difference checks of the gradient, which require the
/// schedule to stay frozen while inputs are perturbed.
inline MultiphaseResult simulate_with_schedule(const TwoPhaseProblem& problem,
                                               double extraction_rate,
                                               const TimeStepSchedule& schedule,
                                               const SaturationField& initial_saturation,
                                               bool keep_trace = true) {
    double horizon = schedule.horizon();
    return detail::run_impes(problem, extraction_rate, horizon, initial_saturation, keep_trace,
                             [&](int step, const FluxField&, const SourceField&, double) {
                                 if (step >= static_cast<int>(schedule.dts.size())) {
                                     throw Error("simulate_with_schedule: schedule exhausted");
                                 }
                                 return schedule.dts[static_cast<std::size_t>(step)];
                             });
}

namespace detail {

/// Adds the saturation sensitivity of one assembled-and-solved pressure
/// stage: s_bar += -d/ds [ w^T (A(s) p - b(s)) ], where w is the adjoint
/// solution for this stage. Covers both the matrix and the Dirichlet
/// right-hand-side dependence on the face transmissibilities.
inline void accumulate_system_adjoint(const Grid& grid, const PermeabilityField& perm,
                                      const std::vector<double>& saturation,
                                      const FluidProps& props, double bc_pressure,
                                      const std::vector<double>& p, const std::vector<double>& w,
                                      std::vector<double>& s_bar) {
    const int nx = grid.nx;
    const int ny = grid.ny;
    const double geom_x = grid.dy / grid.dx;
    const double geom_y = grid.dx / grid.dy;

    std::vector<double> m(saturation.size());
    std::vector<double> dm(saturation.size());
    for (std::size_t c = 0; c < saturation.size(); ++c) {
        m[c] = perm.values[c] * total_mobility(saturation[c], props);
        dm[c] = perm.values[c] * d_total_mobility(saturation[c], props);
    }

    auto interior_face = [&](int lo, int hi, double geom) {
        const double sum = m[lo] + m[hi];
        const double dT_dmlo = geom * 2.0 * m[hi] * m[hi] / (sum * sum);
        const double dT_dmhi = geom * 2.0 * m[lo] * m[lo] / (sum * sum);
        const double t_bar = -(w[lo] - w[hi]) * (p[lo] - p[hi]);
        s_bar[lo] += t_bar * dT_dmlo * dm[lo];
        s_bar[hi] += t_bar * dT_dmhi * dm[hi];
    };
    auto boundary_face = [&](int cell, double geom) {
        const double t_bar = -w[cell] * (p[cell] - bc_pressure);
        s_bar[cell] += t_bar * 2.0 * geom * dm[cell];
    };

    for (int j = 0; j < ny; ++j) {
        boundary_face(grid.index(0, j), geom_x);
        boundary_face(grid.index(nx - 1, j), geom_x);
        for (int i = 1; i < nx; ++i) {
            interior_face(grid.index(i - 1, j), grid.index(i, j), geom_x);
        }
    }
    for (int i = 0; i < nx; ++i) {
        boundary_face(grid.index(i, 0), geom_y);
        boundary_face(grid.index(i, ny - 1), geom_y);
        for (int j = 1; j < ny; ++j) {
            interior_face(grid.index(i, j - 1), grid.index(i, j), geom_y);
        }
    }
}

}  // namespace detail

/// Reverse-mode gradient of the terminal critical-cell pressure with respect
/// to the extraction rate.
///
/// Walks the recorded steps backward: adjoint of the terminal pressure solve,
/// then per step the saturation-update adjoint (donor choices frozen at the
/// forward upwind decisions), the flux adjoint, and the pressure-solve
/// adjoint including the mobility dependence of the matrix. The timestep
/// schedule is treated as constant, matching finite differences evaluated
/// under the same frozen schedule.
inline double gradient_multiphase(const TwoPhaseProblem& problem, double extraction_rate,
                                  double /*horizon*/, const SimulationTrace& trace) {
    problem.validate();
    if (trace.final_pressure.values.size() != static_cast<std::size_t>(problem.grid.cells()) ||
        trace.final_saturation.values.size() != static_cast<std::size_t>(problem.grid.cells())) {
        throw Error("gradient_multiphase: trace is missing the terminal state");
    }
    const Grid& grid = problem.grid;
    const int n = grid.cells();
    const int nx = grid.nx;
    const int ny = grid.ny;
    const SourceField sources = well_sources(grid, problem.wells, extraction_rate);
    const SolveOptions base_opts = detail::impes_solve_options();

    double q_bar = 0.0;
    std::vector<double> s_bar(static_cast<std::size_t>(n), 0.0);
    PressureField adjoint_warm;

    // One assembled stage: solve A(s) w = p_bar and fold the rate and
    // saturation sensitivities of this stage into (q_bar, s_bar).
    auto pressure_stage_adjoint = [&](const std::vector<double>& saturation,
                                      const std::vector<double>& pressure,
                                      const std::vector<double>& p_bar) {
        std::vector<double> mobility(static_cast<std::size_t>(n));
        for (int c = 0; c < n; ++c) {
            mobility[c] = total_mobility(saturation[c], problem.props);
        }
        const FaceCoefficients trans = transmissibilities(grid, problem.perm, mobility);
        LinearSystem sys = assemble_pressure_system(
            grid, trans, SourceField{std::vector<double>(static_cast<std::size_t>(n), 0.0)},
            BoundaryConditions::uniform_dirichlet(problem.bc_pressure));
        sys.rhs = p_bar;
        SolveOptions opts = base_opts;
        if (adjoint_warm.values.size() == static_cast<std::size_t>(n)) {
            opts.initial_guess = &adjoint_warm.values;
        }
        PressureField w = solve_linear(sys, opts);
        q_bar -= w.values[problem.wells.extraction_cell];
        detail::accumulate_system_adjoint(grid, problem.perm, saturation, problem.props,
                                          problem.bc_pressure, pressure, w.values, s_bar);
        adjoint_warm = w;
        return w;
    };

    // Terminal readout solve: J = p_final[critical].
    {
        std::vector<double> p_bar(static_cast<std::size_t>(n), 0.0);
        p_bar[problem.wells.critical_cell] = 1.0;
        pressure_stage_adjoint(trace.final_saturation.values, trace.final_pressure.values, p_bar);
    }

    const double pore = problem.props.porosity * grid.cell_volume;
    for (int step = static_cast<int>(trace.steps.size()) - 1; step >= 0; --step) {
        const StepRecord& rec = trace.steps[static_cast<std::size_t>(step)];
        const std::vector<double>& s = rec.saturation.values;
        const std::vector<double>& p = rec.pressure.values;
        const double dt_over_pore = rec.dt / pore;

        std::vector<double> frac(static_cast<std::size_t>(n));
        std::vector<double> dfrac(static_cast<std::size_t>(n));
        std::vector<double> mobility(static_cast<std::size_t>(n));
        for (int c = 0; c < n; ++c) {
            frac[c] = fractional_flow(s[c], problem.props);
            dfrac[c] = d_fractional_flow(s[c], problem.props);
            mobility[c] = total_mobility(s[c], problem.props);
        }
        const FaceCoefficients trans = transmissibilities(grid, problem.perm, mobility);

        // Adjoint of s' = s + dt/(phi V) * (max(q,0) + f(s) min(q,0) - netout).
        // g = dJ/ds' on entry; build dJ/ds and the face-flux adjoint.
        std::vector<double> g = s_bar;
        std::vector<double> next_s_bar = g;
        std::vector<double> p_bar(static_cast<std::size_t>(n), 0.0);

        for (int c = 0; c < n; ++c) {
            const double q = sources.values[c];
            if (q < 0.0) {
                next_s_bar[c] += g[c] * dt_over_pore * dfrac[c] * q;
            }
        }
        {
            // dJ/d(extraction rate) through the source-splitting term of the
            // extraction cell; d q_cell / d rate = -1.
            const int ext = problem.wells.extraction_cell;
            const double q = sources.values[ext];
            const double coeff = q > 0.0 ? 1.0 : frac[ext];
            q_bar -= g[ext] * dt_over_pore * coeff;
        }

        auto face_adjoint = [&](int lo, int hi, double v, double t, double p_lo, double p_hi) {
            // c_f = d J / d (F_f v_f) with F_f the donor fractional flow.
            double c_f = 0.0;
            if (lo >= 0) {
                c_f -= g[lo] * dt_over_pore;
            }
            if (hi >= 0) {
                c_f += g[hi] * dt_over_pore;
            }
            if (c_f == 0.0) {
                return;
            }
            const int donor = v >= 0.0 ? lo : hi;
            const double f_donor = donor >= 0 ? frac[donor] : 0.0;
            const double v_bar = c_f * f_donor;
            if (donor >= 0) {
                next_s_bar[donor] += c_f * v * dfrac[donor];
            }
            // v = T (p_lo - p_hi); exterior side holds the Dirichlet value.
            if (v_bar != 0.0) {
                if (lo >= 0) {
                    p_bar[lo] += t * v_bar;
                }
                if (hi >= 0) {
                    p_bar[hi] -= t * v_bar;
                }
                const double t_bar = v_bar * (p_lo - p_hi);
                if (lo >= 0 && hi >= 0) {
                    const double m_lo = problem.perm.values[lo] * mobility[lo];
                    const double m_hi = problem.perm.values[hi] * mobility[hi];
                    const double geom = t * (m_lo + m_hi) / (2.0 * m_lo * m_hi);
                    const double sum = m_lo + m_hi;
                    next_s_bar[lo] += t_bar * geom * 2.0 * m_hi * m_hi / (sum * sum) *
                                      problem.perm.values[lo] *
                                      d_total_mobility(s[lo], problem.props);
                    next_s_bar[hi] += t_bar * geom * 2.0 * m_lo * m_lo / (sum * sum) *
                                      problem.perm.values[hi] *
                                      d_total_mobility(s[hi], problem.props);
                } else {
                    const int cell = lo >= 0 ? lo : hi;
                    const double m_cell = problem.perm.values[cell] * mobility[cell];
                    next_s_bar[cell] += t_bar * (t / m_cell) * problem.perm.values[cell] *
                                        d_total_mobility(s[cell], problem.props);
                }
            }
        };

        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i <= nx; ++i) {
                const int f = rec.flux.x_index(i, j);
                const int lo = i > 0 ? grid.index(i - 1, j) : -1;
                const int hi = i < nx ? grid.index(i, j) : -1;
                const double p_lo = lo >= 0 ? p[lo] : problem.bc_pressure;
                const double p_hi = hi >= 0 ? p[hi] : problem.bc_pressure;
                face_adjoint(lo, hi, rec.flux.x[f], trans.x[f], p_lo, p_hi);
            }
        }
        for (int i = 0; i < nx; ++i) {
            for (int j = 0; j <= ny; ++j) {
                const int f = rec.flux.y_index(i, j);
                const int lo = j > 0 ? grid.index(i, j - 1) : -1;
                const int hi = j < ny ? grid.index(i, j) : -1;
                const double p_lo = lo >= 0 ? p[lo] : problem.bc_pressure;
                const double p_hi = hi >= 0 ? p[hi] : problem.bc_pressure;
                face_adjoint(lo, hi, rec.flux.y[f], trans.y[f], p_lo, p_hi);
            }
        }

        s_bar = std::move(next_s_bar);
        bool any = false;
        for (double v : p_bar) {
            if (v != 0.0) {
                any = true;
                break;
            }
        }
        if (any) {
            pressure_stage_adjoint(s, p, p_bar);
        }
    }

    return q_bar;
}

}  // namespace subflow
