#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "subflow/geostats.hpp"
#include "subflow/single_phase.hpp"

using namespace subflow;

namespace {

PermeabilityField uniform_perm(const Grid& g, double k) {
    PermeabilityField f;
    f.values.assign(static_cast<std::size_t>(g.cells()), k);
    return f;
}

double fd_slope(const SinglePhaseProblem& prob, double q) {
    const double h = std::max(1e-6 * std::abs(q), 1e-9);
    return (critical_pressure(prob, q + h) - critical_pressure(prob, q - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("solve_steady: mirror-symmetric wells give an antisymmetric field") {
    const Grid g = build_grid(9, 9, 9.0, 9.0);
    const WellSet w = make_wells(g, 2, 4, 6, 4, 8, 4, 1.0);
    const SinglePhaseProblem prob{g, uniform_perm(g, 1.0), w, 0.0};
    const PressureField p = solve_steady(prob, w.injection_rate);  // equal in/out rates

    double scale = 0.0;
    for (double v : p.values) {
        scale = std::max(scale, std::abs(v));
    }
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            CHECK(p.values[g.index(i, j)] ==
                  Catch::Approx(-p.values[g.index(g.nx - 1 - i, j)]).margin(1e-9 * scale));
        }
        CHECK(std::abs(p.values[g.index(4, j)]) < 1e-9 * scale);  // symmetry line
    }
}

TEST_CASE("solve_steady: pure injection keeps the interior positive") {
    const Grid g = build_grid(7, 7, 7.0, 7.0);
    const WellSet w = make_wells(g, 3, 3, 5, 3, 6, 3, 2.0);
    const SinglePhaseProblem prob{g, uniform_perm(g, 0.5), w, 0.0};
    const PressureField p = solve_steady(prob, 0.0);
    for (double v : p.values) {
        CHECK(v > 0.0);
    }
}

TEST_CASE("solve_steady: heterogeneous 8x8 matches a dense direct solve") {
    const Grid g = build_grid(8, 8, 800.0, 800.0);
    std::mt19937_64 rng(31);
    PermeabilityField k;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::pow(10.0, std::uniform_real_distribution<>(-9.5, -7.5)(rng)));
    }
    const WellSet w = make_wells(g, 2, 4, 5, 4, 6, 4, 0.031688);
    const SinglePhaseProblem prob{g, k, w, 0.0};
    const double q = 0.01;
    const PressureField p = solve_steady(prob, q);
    const auto ref = oracles::dense_solve(steady_system(prob, q));
    double scale = 0.0;
    for (double v : ref) {
        scale = std::max(scale, std::abs(v));
    }
    for (int c = 0; c < g.cells(); ++c) {
        CHECK(p.values[c] == Catch::Approx(ref[c]).margin(1e-9 * scale));
    }
}

TEST_CASE("critical_pressure: no wells flowing gives zero") {
    const Grid g = build_grid(6, 6, 6.0, 6.0);
    const WellSet w = make_wells(g, 1, 1, 3, 3, 4, 4, 0.0);
    const SinglePhaseProblem prob{g, uniform_perm(g, 1.0), w, 0.0};
    CHECK(critical_pressure(prob, 0.0) == 0.0);
}

TEST_CASE("critical_pressure is affine in the extraction rate") {
    const Grid g = build_grid(10, 10, 100.0, 100.0);
    std::mt19937_64 rng(5);
    PermeabilityField k;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::pow(10.0, std::uniform_real_distribution<>(-1.0, 1.0)(rng)));
    }
    const WellSet w = make_wells(g, 2, 5, 6, 5, 8, 5, 1.0);
    const SinglePhaseProblem prob{g, k, w, 0.0};
    const double p0 = critical_pressure(prob, 0.0);
    const double p1 = critical_pressure(prob, 1.0);
    for (double q : {0.3, 0.75, 2.0, -1.5}) {
        const double expected = p0 + q * (p1 - p0);
        CHECK(critical_pressure(prob, q) ==
              Catch::Approx(expected).margin(1e-9 * std::max(std::abs(p0), std::abs(p1))));
    }
}

TEST_CASE("gradient_steady matches central finite differences") {
    const Grid g = build_grid(8, 8, 8.0, 8.0);
    const WellSet w = make_wells(g, 1, 4, 4, 4, 6, 4, 1.0);
    SinglePhaseProblem prob{g, uniform_perm(g, 1.0), w, 0.0};

    const double grad = gradient_steady(prob, 0.5);
    CHECK(grad == Catch::Approx(fd_slope(prob, 0.5)).epsilon(1e-8));

    // independent of the linearization point
    CHECK(gradient_steady(prob, 0.0) == Catch::Approx(gradient_steady(prob, 10.0)).epsilon(1e-12));

    // a strong permeability contrast changes the sensitivity
    PermeabilityField k10 = uniform_perm(g, 1.0);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 4; i < g.nx; ++i) {
            k10.values[g.index(i, j)] = 10.0;
        }
    }
    SinglePhaseProblem prob10{g, k10, w, 0.0};
    const double grad10 = gradient_steady(prob10, 0.5);
    CHECK(grad10 == Catch::Approx(fd_slope(prob10, 0.5)).epsilon(1e-8));
    CHECK(std::abs(grad10 - grad) > 1e-3 * std::abs(grad));
}

TEST_CASE("gradient_steady: seed scaling and adjoint-FD agreement over random fields") {
    const Grid g = build_grid(10, 10, 1000.0, 1000.0);
    GeostatConfig geo;
    geo.variance = 0.5;
    geo.correlation_length = 250.0;
    geo.n_modes = 40;
    geo.mean_log_perm = -8.5;
    const KLBasis basis = build_kl_basis(g, geo);
    const WellSet w = make_wells(g, 2, 5, 6, 5, 8, 5, 0.031688);

    std::mt19937_64 rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const SinglePhaseProblem prob{g, sample_field(basis, geo, 100 + trial), w, 0.0};
        const double q = std::uniform_real_distribution<>(0.0, 0.03)(rng);
        const double adj = gradient_steady(prob, q);
        const double fd = fd_slope(prob, q);
        worst = std::max(worst, std::abs(adj - fd) / std::abs(fd));
        CHECK(gradient_steady(prob, q, 2.0) == Catch::Approx(2.0 * adj).epsilon(1e-14));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("extraction between injector and critical cell always relieves pressure") {
    const Grid g = build_grid(12, 12, 1000.0, 1000.0);
    GeostatConfig geo;
    geo.variance = 1.0;
    geo.correlation_length = 300.0;
    geo.n_modes = 60;
    geo.mean_log_perm = -8.5;
    const KLBasis basis = build_kl_basis(g, geo);
    const WellSet w = make_wells(g, 3, 6, 7, 6, 9, 6, 0.031688);
    for (int trial = 0; trial < 100; ++trial) {
        const SinglePhaseProblem prob{g, sample_field(basis, geo, 5000 + trial), w, 0.0};
        CHECK(gradient_steady(prob, 0.0) < 0.0);
    }
}
