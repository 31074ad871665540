#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "subflow/fvm.hpp"
#include "subflow/grid.hpp"
#include "subflow/linear.hpp"

using namespace subflow;

namespace {

PermeabilityField uniform_perm(const Grid& g, double k) {
    PermeabilityField f;
    f.values.assign(static_cast<std::size_t>(g.cells()), k);
    return f;
}

std::vector<double> unit_mobility(const Grid& g) {
    return std::vector<double>(static_cast<std::size_t>(g.cells()), 1.0);
}

SourceField zero_sources(const Grid& g) {
    SourceField s;
    s.values.assign(static_cast<std::size_t>(g.cells()), 0.0);
    return s;
}

}  // namespace

TEST_CASE("build_grid computes consistent spacing") {
    const Grid g = build_grid(24, 24, 1000.0, 1000.0);
    CHECK(g.dx == Catch::Approx(1000.0 / 24.0).epsilon(1e-15));
    CHECK(g.dy == Catch::Approx(1000.0 / 24.0).epsilon(1e-15));
    CHECK(g.cell_volume == Catch::Approx(g.dx * g.dy).epsilon(1e-15));

    const Grid small = build_grid(3, 3, 3.0, 3.0);
    CHECK(small.dx == 1.0);
    CHECK(small.dy == 1.0);
}

TEST_CASE("build_grid rejects invalid dimensions") {
    CHECK_THROWS_AS(build_grid(2, 5, 10.0, 10.0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(5, 2, 10.0, 10.0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(5, 5, -1.0, 10.0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(5, 5, 10.0, 0.0), std::invalid_argument);
}

TEST_CASE("cell index mapping is a row-major bijection") {
    const Grid g = build_grid(5, 4, 5.0, 4.0);
    std::vector<bool> hit(static_cast<std::size_t>(g.cells()), false);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.index(i, j);
            REQUIRE(c >= 0);
            REQUIRE(c < g.cells());
            CHECK_FALSE(hit[static_cast<std::size_t>(c)]);
            hit[static_cast<std::size_t>(c)] = true;
            CHECK(g.cell_i(c) == i);
            CHECK(g.cell_j(c) == j);
        }
    }
    CHECK(g.index(1, 0) == g.index(0, 0) + 1);  // x varies fastest
}

TEST_CASE("transmissibilities: homogeneous field gives equal interior coefficients") {
    const Grid g = build_grid(4, 4, 4.0, 4.0);
    const auto t = transmissibilities(g, uniform_perm(g, 1.0), unit_mobility(g));
    const double ref = t.x[t.x_index(1, 0)];
    CHECK(ref > 0.0);
    for (int j = 0; j < 4; ++j) {
        for (int i = 1; i < 4; ++i) {
            CHECK(t.x[t.x_index(i, j)] == ref);
        }
    }
    for (int i = 0; i < 4; ++i) {
        for (int j = 1; j < 4; ++j) {
            CHECK(t.y[t.y_index(i, j)] == ref);
        }
    }
}

TEST_CASE("transmissibilities: harmonic averaging") {
    const Grid g = build_grid(4, 3, 4.0, 3.0);  // unit cells
    PermeabilityField k = uniform_perm(g, 1.0);
    k.values[g.index(1, 1)] = 1.0;
    k.values[g.index(2, 1)] = 3.0;
    const auto t = transmissibilities(g, k, unit_mobility(g));
    // 2/(1/1 + 1/3) = 1.5 on unit geometry
    CHECK(t.x[t.x_index(2, 1)] == Catch::Approx(1.5).epsilon(1e-14));

    // vanishing permeability on one side kills the face
    k.values[g.index(1, 1)] = 1e-30;
    const auto t2 = transmissibilities(g, k, unit_mobility(g));
    CHECK(t2.x[t2.x_index(2, 1)] < 1e-29);
}

TEST_CASE("transmissibilities reject non-positive inputs") {
    const Grid g = build_grid(3, 3, 3.0, 3.0);
    PermeabilityField k = uniform_perm(g, 1.0);
    k.values[4] = 0.0;
    CHECK_THROWS_AS(transmissibilities(g, k, unit_mobility(g)), std::invalid_argument);
    k.values[4] = -1.0;
    CHECK_THROWS_AS(transmissibilities(g, k, unit_mobility(g)), std::invalid_argument);
    auto mob = unit_mobility(g);
    mob[2] = 0.0;
    CHECK_THROWS_AS(transmissibilities(g, uniform_perm(g, 1.0), mob), std::invalid_argument);
}

TEST_CASE("assembly: zero sources and zero Dirichlet give the zero solution") {
    const Grid g = build_grid(5, 5, 10.0, 10.0);
    const auto sys = assemble_pressure_system(g, uniform_perm(g, 2.0), unit_mobility(g),
                                              zero_sources(g), 0.0);
    const PressureField p = solve_linear(sys);
    for (double v : p.values) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("assembly: matrix is exactly symmetric and rows sum to the boundary coupling") {
    const Grid g = build_grid(5, 4, 7.0, 9.0);
    std::mt19937_64 rng(42);
    PermeabilityField k;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::exp(std::uniform_real_distribution<>(-1.0, 1.0)(rng)));
    }
    const auto trans = transmissibilities(g, k, unit_mobility(g));
    const auto sys = assemble_pressure_system(g, trans, zero_sources(g),
                                              BoundaryConditions::uniform_dirichlet(0.0));

    const Eigen::MatrixXd a = oracles::dense_matrix(sys);
    CHECK((a - a.transpose()).norm() == 0.0);

    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.index(i, j);
            double boundary_coupling = 0.0;
            if (i == 0) boundary_coupling += trans.x[trans.x_index(0, j)];
            if (i == g.nx - 1) boundary_coupling += trans.x[trans.x_index(g.nx, j)];
            if (j == 0) boundary_coupling += trans.y[trans.y_index(i, 0)];
            if (j == g.ny - 1) boundary_coupling += trans.y[trans.y_index(i, g.ny)];
            CHECK(a.row(c).sum() == Catch::Approx(boundary_coupling).margin(1e-12 * sys.diag[c]));
        }
    }
}

TEST_CASE("assembly: 3x3 center source matches a dense direct solve") {
    const Grid g = build_grid(3, 3, 3.0, 3.0);
    SourceField q = zero_sources(g);
    q.values[g.index(1, 1)] = 1.0;
    const auto sys = assemble_pressure_system(g, uniform_perm(g, 1.0), unit_mobility(g), q, 0.0);
    const PressureField p = solve_linear(sys);
    const auto ref = oracles::dense_solve(sys);
    for (int c = 0; c < g.cells(); ++c) {
        CHECK(p.values[c] == Catch::Approx(ref[c]).epsilon(1e-9));
    }
}

TEST_CASE("assembly: solution scales linearly with the sources") {
    const Grid g = build_grid(6, 5, 12.0, 10.0);
    std::mt19937_64 rng(7);
    PermeabilityField k;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::pow(10.0, std::uniform_real_distribution<>(-1.0, 1.0)(rng)));
    }
    SourceField q = zero_sources(g);
    q.values[7] = 2.5;
    q.values[21] = -1.0;
    const auto sys1 = assemble_pressure_system(g, k, unit_mobility(g), q, 0.0);
    for (double& v : q.values) {
        v *= 3.0;
    }
    const auto sys3 = assemble_pressure_system(g, k, unit_mobility(g), q, 0.0);
    const PressureField p1 = solve_linear(sys1);
    const PressureField p3 = solve_linear(sys3);
    double scale = 0.0;
    for (double v : p1.values) {
        scale = std::max(scale, std::abs(v));
    }
    for (int c = 0; c < g.cells(); ++c) {
        CHECK(p3.values[c] == Catch::Approx(3.0 * p1.values[c]).margin(3e-9 * scale));
    }
}

TEST_CASE("superposition of sources for fixed mobility") {
    const Grid g = build_grid(6, 6, 6.0, 6.0);
    std::mt19937_64 rng(11);
    PermeabilityField k;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::pow(10.0, std::uniform_real_distribution<>(-0.5, 0.5)(rng)));
    }
    SourceField q1 = zero_sources(g), q2 = zero_sources(g), q12 = zero_sources(g);
    q1.values[8] = 1.0;
    q2.values[27] = -0.7;
    for (int c = 0; c < g.cells(); ++c) {
        q12.values[c] = q1.values[c] + q2.values[c];
    }
    const PressureField pa = solve_linear(assemble_pressure_system(g, k, unit_mobility(g), q1, 0.0));
    const PressureField pb = solve_linear(assemble_pressure_system(g, k, unit_mobility(g), q2, 0.0));
    const PressureField pc = solve_linear(assemble_pressure_system(g, k, unit_mobility(g), q12, 0.0));
    double scale = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        scale = std::max(scale, std::abs(pc.values[c]));
    }
    for (int c = 0; c < g.cells(); ++c) {
        CHECK(pc.values[c] == Catch::Approx(pa.values[c] + pb.values[c]).margin(1e-9 * scale));
    }
}

TEST_CASE("discrete conservation: interior face fluxes balance the cell source") {
    const Grid g = build_grid(8, 7, 16.0, 14.0);
    std::mt19937_64 rng(3);
    PermeabilityField k;
    for (int c = 0; c < g.cells(); ++c) {
        k.values.push_back(std::pow(10.0, std::uniform_real_distribution<>(-1.0, 1.0)(rng)));
    }
    SourceField q = zero_sources(g);
    q.values[g.index(2, 3)] = 1.3;
    q.values[g.index(6, 2)] = -0.9;
    const auto trans = transmissibilities(g, k, unit_mobility(g));
    const auto bc = BoundaryConditions::uniform_dirichlet(0.0);
    const auto sys = assemble_pressure_system(g, trans, q, bc);
    SolveOptions opts;
    opts.rel_tol = 1e-13;
    opts.accept_tol = 1e-11;
    const PressureField p = solve_linear(sys, opts);
    const FluxField v = face_fluxes(g, trans, p, bc);

    const double flux_scale = 1.3;
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            CHECK(std::abs(cell_flux_imbalance(g, v, q, i, j)) < 1e-9 * flux_scale);
        }
    }
}

TEST_CASE("monotonicity: single positive source with zero Dirichlet boundary") {
    const Grid g = build_grid(9, 9, 18.0, 18.0);
    SourceField q = zero_sources(g);
    q.values[g.index(4, 4)] = 1.0;
    const PressureField p =
        solve_linear(assemble_pressure_system(g, uniform_perm(g, 1.5), unit_mobility(g), q, 0.0));
    for (double v : p.values) {
        CHECK(v >= 0.0);
    }
}

TEST_CASE("layered column reproduces the harmonic-mean effective conductance") {
    // A y-uniform layered field with sealed top/bottom behaves as a 1D column.
    const int nx = 8;
    const Grid g = build_grid(nx, 3, 8.0, 3.0);
    const double layers[nx] = {1.0, 0.5, 2.0, 4.0, 0.25, 1.5, 3.0, 0.8};
    PermeabilityField k;
    k.values.resize(static_cast<std::size_t>(g.cells()));
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            k.values[static_cast<std::size_t>(g.index(i, j))] = layers[i];
        }
    }
    BoundaryConditions bc = BoundaryConditions::all_sealed();
    const double p_left = 5.0, p_right = 1.0;
    bc.left = {BoundaryKind::dirichlet, p_left};
    bc.right = {BoundaryKind::dirichlet, p_right};

    const auto trans = transmissibilities(g, k, unit_mobility(g));
    const auto sys = assemble_pressure_system(g, trans, zero_sources(g), bc);
    SolveOptions opts;
    opts.rel_tol = 1e-13;
    opts.accept_tol = 1e-11;
    const PressureField p = solve_linear(sys, opts);
    const FluxField v = face_fluxes(g, trans, p, bc);

    // Series resistances: two half cells at the ends plus harmonic interior faces.
    double resistance = 0.5 / layers[0] + 0.5 / layers[nx - 1];
    for (int i = 0; i + 1 < nx; ++i) {
        resistance += 0.5 / layers[i] + 0.5 / layers[i + 1];
    }
    const double conductance_expected = 1.0 / resistance;  // unit cells, unit area
    const double flux_row = v.x[v.x_index(0, 1)];           // inflow at the left end, middle row
    const double conductance_measured = flux_row / (p_left - p_right);
    CHECK(conductance_measured == Catch::Approx(conductance_expected).epsilon(1e-8));

    // y-invariance: all three rows identical
    for (int i = 0; i < nx; ++i) {
        CHECK(p.values[g.index(i, 0)] == Catch::Approx(p.values[g.index(i, 1)]).epsilon(1e-10));
        CHECK(p.values[g.index(i, 2)] == Catch::Approx(p.values[g.index(i, 1)]).epsilon(1e-10));
    }
}
