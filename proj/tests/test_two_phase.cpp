#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "subflow/geostats.hpp"
#include "subflow/two_phase.hpp"

using namespace subflow;

namespace {

PermeabilityField uniform_perm(const Grid& g, double k) {
    PermeabilityField f;
    f.values.assign(static_cast<std::size_t>(g.cells()), k);
    return f;
}

SaturationField uniform_sat(const Grid& g, double s) {
    SaturationField f;
    f.values.assign(static_cast<std::size_t>(g.cells()), s);
    return f;
}

/// Net wetting volume change minus dt * (wetting sources - wetting boundary
/// outflux); zero for an exact step.
double wetting_balance_residual(const Grid& g, const SaturationField& before,
                                const SaturationField& after, const FluxField& v,
                                const SourceField& q, double dt, const FluidProps& props) {
    double volume_change = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        volume_change += props.porosity * g.cell_volume * (after.values[c] - before.values[c]);
    }
    double source_total = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        const double qc = q.values[c];
        source_total += std::max(qc, 0.0) +
                        fractional_flow(before.values[c], props) * std::min(qc, 0.0);
    }
    double boundary_outflux = 0.0;
    for (int j = 0; j < g.ny; ++j) {
        const double v_left = v.x[v.x_index(0, j)];
        if (v_left < 0.0) {  // leaving through the left side
            boundary_outflux += -v_left * fractional_flow(before.values[g.index(0, j)], props);
        }
        const double v_right = v.x[v.x_index(g.nx, j)];
        if (v_right > 0.0) {
            boundary_outflux += v_right * fractional_flow(before.values[g.index(g.nx - 1, j)], props);
        }
    }
    for (int i = 0; i < g.nx; ++i) {
        const double v_bottom = v.y[v.y_index(i, 0)];
        if (v_bottom < 0.0) {
            boundary_outflux += -v_bottom * fractional_flow(before.values[g.index(i, 0)], props);
        }
        const double v_top = v.y[v.y_index(i, g.ny)];
        if (v_top > 0.0) {
            boundary_outflux += v_top * fractional_flow(before.values[g.index(i, g.ny - 1)], props);
        }
    }
    return volume_change - dt * (source_total - boundary_outflux);
}

}  // namespace

TEST_CASE("mobilities and normalized saturation") {
    FluidProps props;  // table defaults: unit viscosities, zero endpoints
    CHECK(mobility_w(1.0, props) == 1.0);
    CHECK(mobility_nw(1.0, props) == 0.0);
    CHECK(mobility_w(0.0, props) == 0.0);
    CHECK(mobility_nw(0.0, props) == 1.0);
    CHECK(mobility_w(0.5, props) == 0.25);
    CHECK(mobility_nw(0.5, props) == 0.25);
    CHECK_THROWS_AS(mobility_w(1.5, props), std::invalid_argument);
    CHECK_THROWS_AS(mobility_nw(-0.2, props), std::invalid_argument);

    FluidProps clamped;
    clamped.s_wc = 0.2;
    clamped.s_nwr = 0.1;
    CHECK(normalized_saturation(0.2, clamped) == 0.0);
    CHECK(normalized_saturation(0.9, clamped) == 1.0);
    CHECK(normalized_saturation(0.55, clamped) == Catch::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("fractional flow endpoints, symmetry and monotonicity") {
    FluidProps props;
    CHECK(fractional_flow(0.0, props) == 0.0);
    CHECK(fractional_flow(1.0, props) == 1.0);
    CHECK(fractional_flow(0.5, props) == 0.5);

    FluidProps visc;
    visc.mu_w = 1.0;
    visc.mu_nw = 2.0;
    CHECK(fractional_flow(0.5, visc) == Catch::Approx(2.0 / 3.0).epsilon(1e-14));

    double prev = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double f = fractional_flow(k / 100.0, props);
        CHECK(f >= prev - 1e-15);
        prev = f;
    }
}

TEST_CASE("max fractional-flow slope") {
    FluidProps equal;
    CHECK(max_fractional_flow_slope(equal) == 2.0);
    FluidProps skew;
    skew.mu_w = 1.0;
    skew.mu_nw = 5.0;
    const double m = max_fractional_flow_slope(skew);
    // scanned maximum must dominate the analytic derivative on a finer grid
    for (int k = 0; k <= 5000; ++k) {
        const double s = k / 5000.0;
        CHECK(d_fractional_flow(s, skew) <= m * (1.0 + 1e-3) + 1e-12);
    }
}

TEST_CASE("impes_pressure_step: uniform s=0 reduces to the single-phase system") {
    const Grid g = build_grid(6, 6, 600.0, 600.0);
    const WellSet w = make_wells(g, 1, 3, 3, 3, 4, 3, 0.02);
    FluidProps props;
    props.mu_nw = 2.0;  // lambda_total(0) = 1/2
    const auto step = impes_pressure_step(g, uniform_perm(g, 1e-9), uniform_sat(g, 0.0), w, 0.01,
                                          props, 0.0);
    const SinglePhaseProblem single{g, uniform_perm(g, 1e-9), w, 0.0};
    const PressureField ps = solve_steady(single, 0.01);
    double scale = 0.0;
    for (double v : ps.values) {
        scale = std::max(scale, std::abs(v));
    }
    for (int c = 0; c < g.cells(); ++c) {
        CHECK(step.pressure.values[c] == Catch::Approx(2.0 * ps.values[c]).margin(1e-8 * scale));
    }
}

TEST_CASE("impes_pressure_step: interior flux balance equals the cell source") {
    const Grid g = build_grid(8, 8, 800.0, 800.0);
    std::mt19937_64 rng(13);
    PermeabilityField k;
    SaturationField s;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::pow(10.0, std::uniform_real_distribution<>(-9.0, -8.0)(rng)));
        s.values.push_back(std::uniform_real_distribution<>(0.0, 1.0)(rng));
    }
    const WellSet w = make_wells(g, 2, 4, 5, 4, 6, 4, 0.031688);
    const double q_ext = 0.01;
    const auto step = impes_pressure_step(g, k, s, w, q_ext, FluidProps{}, 0.0);
    const SourceField q = well_sources(g, w, q_ext);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            CHECK(std::abs(cell_flux_imbalance(g, step.flux, q, i, j)) < 1e-9 * w.injection_rate);
        }
    }
}

TEST_CASE("cfl_timestep: zero transport returns the remaining horizon") {
    const Grid g = build_grid(4, 4, 4.0, 4.0);
    FluxField v;
    v.nx = 4;
    v.ny = 4;
    v.x.assign(5 * 4, 0.0);
    v.y.assign(4 * 5, 0.0);
    SourceField q;
    q.values.assign(16, 0.0);
    CHECK(cfl_timestep(g, v, q, FluidProps{}, 0.9, 1234.5) == 1234.5);
}

TEST_CASE("cfl_timestep: doubling the fluxes halves the step") {
    const Grid g = build_grid(4, 4, 4.0, 4.0);
    FluxField v;
    v.nx = 4;
    v.ny = 4;
    v.x.assign(5 * 4, 0.0);
    v.y.assign(4 * 5, 0.0);
    v.x[v.x_index(2, 1)] = 0.25;
    v.x[v.x_index(2, 2)] = -0.125;
    SourceField q;
    q.values.assign(16, 0.0);
    const double dt1 = cfl_timestep(g, v, q, FluidProps{}, 0.9, 1e30);
    for (double& f : v.x) {
        f *= 2.0;
    }
    const double dt2 = cfl_timestep(g, v, q, FluidProps{}, 0.9, 1e30);
    CHECK(dt2 == Catch::Approx(0.5 * dt1).epsilon(1e-14));
}

TEST_CASE("cfl_timestep: single-injector case matches a hand evaluation") {
    const Grid g = build_grid(3, 3, 3.0, 3.0);
    const WellSet w = make_wells(g, 1, 1, 0, 0, 2, 2, 0.5);
    FluidProps props;
    const auto step = impes_pressure_step(g, uniform_perm(g, 1.0), uniform_sat(g, 0.0), w, 0.0,
                                          props, 0.0);
    const SourceField q = well_sources(g, w, 0.0);
    const double dt = cfl_timestep(g, step.flux, q, props, 0.9, 1e30);

    // Hand evaluation: influx per cell = positive source + face inflows.
    std::vector<double> influx(9, 0.0);
    influx[g.index(1, 1)] = 0.5;  // injector
    for (int j = 0; j < 3; ++j) {
        for (int i = 0; i <= 3; ++i) {
            const double v = step.flux.x[step.flux.x_index(i, j)];
            if (v > 0.0 && i < 3) influx[g.index(i, j)] += v;
            if (v < 0.0 && i > 0) influx[g.index(i - 1, j)] -= v;
        }
    }
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j <= 3; ++j) {
            const double v = step.flux.y[step.flux.y_index(i, j)];
            if (v > 0.0 && j < 3) influx[g.index(i, j)] += v;
            if (v < 0.0 && j > 0) influx[g.index(i, j - 1)] -= v;
        }
    }
    double expected = 1e300;
    for (int c = 0; c < 9; ++c) {
        if (influx[c] > 0.0) {
            expected = std::min(expected, 1.0 * g.cell_volume * 1.0 / (influx[c] * 2.0));
        }
    }
    CHECK(dt == Catch::Approx(0.9 * expected).epsilon(1e-12));
}

TEST_CASE("saturation_step: identity without fluxes or sources") {
    const Grid g = build_grid(4, 4, 4.0, 4.0);
    FluxField v;
    v.nx = 4;
    v.ny = 4;
    v.x.assign(20, 0.0);
    v.y.assign(20, 0.0);
    SourceField q;
    q.values.assign(16, 0.0);
    SaturationField s = uniform_sat(g, 0.37);
    const SaturationField next = saturation_step(s, v, q, 100.0, g, FluidProps{});
    CHECK(next.values == s.values);
}

TEST_CASE("saturation_step: injection raises the injection cell") {
    const Grid g = build_grid(3, 3, 3.0, 3.0);
    FluxField v;
    v.nx = 3;
    v.ny = 3;
    v.x.assign(12, 0.0);
    v.y.assign(12, 0.0);
    SourceField q;
    q.values.assign(9, 0.0);
    q.values[g.index(1, 1)] = 0.1;
    const SaturationField s0 = uniform_sat(g, 0.0);
    const SaturationField next = saturation_step(s0, v, q, 1.0, g, FluidProps{});
    CHECK(next.values[g.index(1, 1)] > 0.0);
    for (int c = 0; c < 9; ++c) {
        if (c != g.index(1, 1)) {
            CHECK(next.values[c] == 0.0);
        }
    }
}

TEST_CASE("saturation_step: pairwise transfer conserves mass exactly") {
    const Grid g = build_grid(3, 3, 3.0, 3.0);
    FluxField v;
    v.nx = 3;
    v.ny = 3;
    v.x.assign(12, 0.0);
    v.y.assign(12, 0.0);
    v.x[v.x_index(1, 1)] = 0.05;  // (0,1) -> (1,1) only
    SourceField q;
    q.values.assign(9, 0.0);
    SaturationField s = uniform_sat(g, 0.0);
    s.values[g.index(0, 1)] = 0.8;
    const SaturationField next = saturation_step(s, v, q, 1.0, g, FluidProps{});
    const double lost = s.values[g.index(0, 1)] - next.values[g.index(0, 1)];
    const double gained = next.values[g.index(1, 1)] - s.values[g.index(1, 1)];
    CHECK(lost == gained);  // identical cell volumes: exact cancellation
    CHECK(lost > 0.0);
}

TEST_CASE("saturation_step: oversized timestep is reported as a CFL violation") {
    const Grid g = build_grid(3, 3, 3.0, 3.0);
    FluxField v;
    v.nx = 3;
    v.ny = 3;
    v.x.assign(12, 0.0);
    v.y.assign(12, 0.0);
    SourceField q;
    q.values.assign(9, 0.0);
    q.values[4] = 1.0;
    CHECK_THROWS_AS(saturation_step(uniform_sat(g, 0.9), v, q, 1e6, g, FluidProps{}), CflError);
}

TEST_CASE("simulate_multiphase: zero horizon returns the t=0 pressure") {
    const Grid g = build_grid(6, 6, 600.0, 600.0);
    const WellSet w = make_wells(g, 1, 3, 3, 3, 4, 3, 0.02);
    TwoPhaseProblem prob{g, uniform_perm(g, 1e-9), w, FluidProps{}, 0.0, 0.9, 1000};
    const auto r = simulate_multiphase(prob, 0.005, 0.0, uniform_sat(g, 0.0));
    const auto t0 = impes_pressure_step(g, prob.perm, uniform_sat(g, 0.0), w, 0.005, prob.props, 0.0);
    CHECK(r.trace.steps.empty());
    CHECK(r.critical_pressure ==
          Catch::Approx(t0.pressure.values[w.critical_cell]).epsilon(1e-12));
}

TEST_CASE("simulate_multiphase: no wells flowing keeps pressure at zero for all time") {
    const Grid g = build_grid(5, 5, 500.0, 500.0);
    WellSet w = make_wells(g, 1, 2, 3, 2, 4, 2, 0.0);  // zero injection
    TwoPhaseProblem prob{g, uniform_perm(g, 1e-9), w, FluidProps{}, 0.0, 0.9, 1000};
    const auto r = simulate_multiphase(prob, 0.0, 1e6, uniform_sat(g, 0.4));
    CHECK(r.critical_pressure == 0.0);
    for (const auto& rec : r.trace.steps) {
        for (double p : rec.pressure.values) {
            CHECK(p == 0.0);
        }
    }
}

TEST_CASE("simulate_multiphase: timesteps sum to the horizon") {
    const Grid g = build_grid(6, 6, 600.0, 600.0);
    const WellSet w = make_wells(g, 1, 3, 3, 3, 4, 3, 0.02);
    TwoPhaseProblem prob{g, uniform_perm(g, 1e-9), w, FluidProps{}, 0.0, 0.9, 100000};
    const double horizon = 3.3e5;
    const auto r = simulate_multiphase(prob, 0.004, horizon, uniform_sat(g, 0.0));
    double total = 0.0;
    for (const auto& rec : r.trace.steps) {
        CHECK(rec.dt > 0.0);
        total += rec.dt;
    }
    CHECK(total == Catch::Approx(horizon).epsilon(1e-9));
}

TEST_CASE("simulate_multiphase: step cap guards runaway loops") {
    const Grid g = build_grid(6, 6, 600.0, 600.0);
    const WellSet w = make_wells(g, 1, 3, 3, 3, 4, 3, 0.02);
    TwoPhaseProblem prob{g, uniform_perm(g, 1e-9), w, FluidProps{}, 0.0, 0.9, 3};
    CHECK_THROWS_AS(simulate_multiphase(prob, 0.004, 1e9, uniform_sat(g, 0.0)), Error);
}

TEST_CASE("simulate_multiphase: 8x8 terminal saturations match the small-dt reference") {
    const Grid g = build_grid(8, 8, 800.0, 800.0);
    GeostatConfig geo;
    geo.variance = 0.3;
    geo.correlation_length = 220.0;
    geo.n_modes = 30;
    geo.mean_log_perm = -8.5;
    const KLBasis basis = build_kl_basis(g, geo);
    const PermeabilityField k = sample_field(basis, geo, 4242);
    const WellSet w = make_wells(g, 2, 4, 5, 4, 6, 4, 0.031688);
    FluidProps props;
    TwoPhaseProblem prob{g, k, w, props, 0.0, 0.9, 100000};
    const double horizon = 4e5;  // a couple of plume radii of growth
    const auto r = simulate_multiphase(prob, 0.008, horizon, uniform_sat(g, 0.0));

    const double dt_ref = r.trace.steps.front().dt / 50.0;
    const std::vector<double> ref =
        oracles::reference_impes(g, k.values, w, 0.008, props, 0.0, horizon, dt_ref,
                                 std::vector<double>(static_cast<std::size_t>(g.cells()), 0.0));
    double linf = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        linf = std::max(linf, std::abs(r.trace.final_saturation.values[c] - ref[c]));
    }
    CHECK(linf <= 1e-3);
}

TEST_CASE("IMPES steps keep saturations in bounds and conserve wetting volume") {
    const Grid g = build_grid(8, 8, 800.0, 800.0);
    GeostatConfig geo;
    geo.variance = 0.6;
    geo.correlation_length = 200.0;
    geo.n_modes = 40;
    geo.mean_log_perm = -8.5;
    const KLBasis basis = build_kl_basis(g, geo);
    const WellSet w = make_wells(g, 2, 4, 5, 4, 6, 4, 0.031688);
    FluidProps props;

    std::mt19937_64 rng(17);
    int steps_checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const PermeabilityField k = sample_field(basis, geo, 900 + trial);
        SaturationField s;
        for (int c = 0; c < g.cells(); ++c) {
            s.values.push_back(std::uniform_real_distribution<>(0.0, 1.0)(rng));
        }
        const double q_ext = std::uniform_real_distribution<>(0.0, 0.03)(rng);
        const SourceField q = well_sources(g, w, q_ext);
        for (int step = 0; step < 5; ++step) {
            const auto ps = impes_pressure_step(g, k, s, w, q_ext, props, 0.0);
            const double dt = cfl_timestep(g, ps.flux, q, props, 0.9, 1e9);
            const SaturationField next = saturation_step(s, ps.flux, q, dt, g, props);
            for (double v : next.values) {
                CHECK(v >= -1e-12);
                CHECK(v <= 1.0 + 1e-12);
            }
            const double residual = wetting_balance_residual(g, s, next, ps.flux, q, dt, props);
            const double throughput = dt * (w.injection_rate + q_ext);
            CHECK(std::abs(residual) <= 1e-9 * throughput);
            s = next;
            ++steps_checked;
        }
    }
    CHECK(steps_checked == 200);
}

TEST_CASE("gradient_multiphase: zero-horizon limit equals the steady adjoint") {
    const Grid g = build_grid(6, 6, 600.0, 600.0);
    const WellSet w = make_wells(g, 1, 3, 3, 3, 4, 3, 0.02);
    TwoPhaseProblem prob{g, uniform_perm(g, 1e-9), w, FluidProps{}, 0.0, 0.9, 1000};
    // s = 0 uniformly: lambda_total = 1, identical to the unit-mobility steady problem
    const auto r = simulate_multiphase(prob, 0.004, 0.0, uniform_sat(g, 0.0));
    const double grad_multi = gradient_multiphase(prob, 0.004, 0.0, r.trace);
    const SinglePhaseProblem single{g, prob.perm, w, 0.0};
    CHECK(grad_multi == Catch::Approx(gradient_steady(single, 0.004)).epsilon(1e-9));
}

TEST_CASE("gradient_multiphase matches frozen-schedule finite differences") {
    const Grid g = build_grid(12, 12, 1000.0, 1000.0);
    GeostatConfig geo;
    geo.variance = 0.4;
    geo.correlation_length = 300.0;
    geo.n_modes = 60;
    geo.mean_log_perm = -8.5;
    const KLBasis basis = build_kl_basis(g, geo);
    const WellSet w = make_wells(g, 3, 6, 7, 6, 9, 6, 0.031688);
    FluidProps props;

    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        TwoPhaseProblem prob{g, sample_field(basis, geo, 7000 + trial), w, props, 0.0, 0.9, 100000};
        const double q = 0.002 + 0.004 * trial;
        const SaturationField s0 = uniform_sat(g, 0.0);
        const auto fwd = simulate_multiphase(prob, q, 1e6, s0);  // ~10 steps at this resolution
        const double adj = gradient_multiphase(prob, q, 1e6, fwd.trace);

        const TimeStepSchedule sched = schedule_from_trace(fwd.trace, prob.cfl_factor);
        const double h = std::max(1e-6 * q, 1e-9);
        const double pp = simulate_with_schedule(prob, q + h, sched, s0, false).critical_pressure;
        const double pm = simulate_with_schedule(prob, q - h, sched, s0, false).critical_pressure;
        const double fd = (pp - pm) / (2.0 * h);
        worst = std::max(worst, std::abs(adj - fd) / std::abs(fd));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("gradient_multiphase: more extraction always lowers the critical pressure") {
    const Grid g = build_grid(10, 10, 1000.0, 1000.0);
    GeostatConfig geo;
    geo.variance = 0.5;
    geo.correlation_length = 280.0;
    geo.n_modes = 50;
    geo.mean_log_perm = -8.5;
    const KLBasis basis = build_kl_basis(g, geo);
    const WellSet w = make_wells(g, 2, 5, 6, 5, 8, 5, 0.031688);
    for (int trial = 0; trial < 5; ++trial) {
        TwoPhaseProblem prob{g, sample_field(basis, geo, 8100 + trial), w, FluidProps{}, 0.0, 0.9,
                             100000};
        const auto fwd = simulate_multiphase(prob, 0.006, 6e5, uniform_sat(g, 0.0));
        CHECK(gradient_multiphase(prob, 0.006, 6e5, fwd.trace) < 0.0);
    }
}

TEST_CASE("uniform initial saturation reduces the first solve to scaled single-phase") {
    const Grid g = build_grid(6, 6, 600.0, 600.0);
    const WellSet w = make_wells(g, 1, 3, 3, 3, 4, 3, 0.02);
    FluidProps props;
    const SinglePhaseProblem single{g, uniform_perm(g, 1e-9), w, 0.0};
    const PressureField ps = solve_steady(single, 0.007);
    for (double s0 : {0.0, 1.0}) {
        const auto step = impes_pressure_step(g, uniform_perm(g, 1e-9), uniform_sat(g, s0), w,
                                              0.007, props, 0.0);
        const double lambda = total_mobility(s0, props);  // spatially uniform
        double scale = 0.0;
        for (double v : ps.values) {
            scale = std::max(scale, std::abs(v));
        }
        for (int c = 0; c < g.cells(); ++c) {
            CHECK(step.pressure.values[c] ==
                  Catch::Approx(ps.values[c] / lambda).margin(1e-8 * scale));
        }
    }
}
