#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "captopt/pnp.hpp"
#include "support/oracles.hpp"

using namespace captopt;

namespace {

// Phase field with a smooth electrolyte/electrode interface at x = x0.
NodalField interface_profile(const TriangleMesh& mesh, double x0, double width) {
    NodalField phi(static_cast<std::size_t>(mesh.num_vertices()));
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        double x = mesh.vertices[static_cast<std::size_t>(v)].x;
        phi[static_cast<std::size_t>(v)] = clamp01(0.5 - 0.5 * std::tanh((x - x0) / width));
    }
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
        if (t == VertexTag::GammaIn)
            phi[static_cast<std::size_t>(v)] = 1.0;
        else if (t == VertexTag::GammaTwo)
            phi[static_cast<std::size_t>(v)] = 0.0;
    }
    return phi;
}

// Nodes on the electrolyte side of the diffuse interface: phi >= 0.5 sharing
// an element with a node of phi < 0.5.
std::vector<int> interface_band(const TriangleMesh& mesh, const NodalField& phi) {
    std::vector<char> in_band(static_cast<std::size_t>(mesh.num_vertices()), 0);
    for (const auto& t : mesh.triangles) {
        bool has_low = false;
        for (int a : t)
            has_low = has_low || phi[static_cast<std::size_t>(a)] < 0.5;
        if (!has_low)
            continue;
        for (int a : t)
            if (phi[static_cast<std::size_t>(a)] >= 0.5)
                in_band[static_cast<std::size_t>(a)] = 1;
    }
    std::vector<int> band;
    for (int v = 0; v < mesh.num_vertices(); ++v)
        if (in_band[static_cast<std::size_t>(v)])
            band.push_back(v);
    return band;
}

} // namespace

TEST_CASE("slotboom transform") {
    CHECK(slotboom_forward(0.5, 0.0, 1.0, +1, 1.0) ==
          doctest::Approx(0.5 * std::exp(-1.0)).epsilon(1e-14));
    CHECK(slotboom_forward(0.0, 3.0, 0.2, -1, 1.0) == 0.0);
    oracle::Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        double c = rng.uniform(0.0, 10.0), psi = rng.uniform(-5, 5), phi = rng.uniform(0, 1);
        int z = trial % 2 ? 1 : -1;
        double back = slotboom_inverse(slotboom_forward(c, psi, phi, z, 1.0), psi, phi, z, 1.0);
        CHECK(back == doctest::Approx(c).epsilon(1e-14));
    }
    CHECK_THROWS_AS(slotboom_forward(1.0, 800.0, 0.0, 1, 1.0), Error);
    CHECK_THROWS_AS(slotboom_inverse(1.0, -800.0, 0.0, 1, 1.0), Error);
}

TEST_CASE("poisson-boltzmann: symmetric species with zero boundary data give psi = 0") {
    auto mesh = generate_rectangle_mesh(6, 6, 1.0, 2.0);
    PhysicalParams pp;
    pp.g_gamma2 = 0.0;
    SolverTolerances tol;
    const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
    NodalField phi(n, 0.7);
    std::array<NodalField, 2> rho{NodalField(n, 0.4), NodalField(n, 0.4)};
    auto psi = solve_poisson_boltzmann(mesh, phi, rho, pp, tol);
    for (double p : psi)
        CHECK(std::abs(p) < 1e-14);
}

TEST_CASE("poisson-boltzmann: Laplace limit gives the linear profile") {
    auto mesh = generate_rectangle_mesh(8, 1, 1.0, 0.25);
    PhysicalParams pp; // g_gamma2 = -0.5
    SolverTolerances tol;
    const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
    NodalField phi(n, 1.0); // constant dielectric
    std::array<NodalField, 2> rho{NodalField(n, 0.0), NodalField(n, 0.0)};
    auto psi = solve_poisson_boltzmann(mesh, phi, rho, pp, tol);
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        double x = mesh.vertices[static_cast<std::size_t>(v)].x;
        CHECK(psi[static_cast<std::size_t>(v)] == doctest::Approx(-0.5 * x).epsilon(1e-10));
    }
}

TEST_CASE("poisson-boltzmann on interface data: decreasing residuals, Picard agreement") {
    auto mesh = generate_rectangle_mesh(8, 16, 1.0, 2.0);
    PhysicalParams pp;
    SolverTolerances tol;
    auto phi = interface_profile(mesh, 0.6, 0.08);
    // fixed rho from one continuity pass at the Dirichlet lift of g
    const int n = mesh.num_vertices();
    NodalField psi0(static_cast<std::size_t>(n), 0.0);
    for (int v = 0; v < n; ++v) {
        VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
        if (t == VertexTag::GammaIn || t == VertexTag::GammaTwo)
            psi0[static_cast<std::size_t>(v)] = psi_boundary_value(pp, t);
    }
    std::array<NodalField, 2> rho{solve_continuity(mesh, phi, psi0, pp, 0),
                                  solve_continuity(mesh, phi, psi0, pp, 1)};

    PBDiagnostics diag;
    auto psi = solve_poisson_boltzmann(mesh, phi, rho, pp, tol, nullptr, &diag);
    REQUIRE(diag.converged);
    REQUIRE(diag.residual_history.size() >= 2);
    for (std::size_t k = 1; k < diag.residual_history.size(); ++k)
        CHECK(diag.residual_history[k] < diag.residual_history[k - 1]);
    CHECK(diag.residual_history.back() <= 1e-10);

    // damped Picard oracle on the same discrete equation
    auto A_eps = assemble_weighted_stiffness(
        mesh, captopt::detail::elementwise_dielectric(mesh, phi, pp));
    NodalField pk = psi0;
    for (int it = 0; it < 4000; ++it) {
        NodalField s(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            auto eavg = elementwise_inverse_average(
                mesh, captopt::detail::drift_exponent(phi, pk, z, pp.alpha0));
            for (int k = 0; k < mesh.num_triangles(); ++k) {
                double w = mesh.signed_area(k) / 3.0;
                for (int a : mesh.triangles[static_cast<std::size_t>(k)])
                    s[static_cast<std::size_t>(a)] +=
                        w * z * rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] *
                        eavg[static_cast<std::size_t>(k)];
            }
        }
        LinearSystem sys{A_eps, s, {}, false};
        for (int v = 0; v < n; ++v) {
            VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
            if (t == VertexTag::GammaIn || t == VertexTag::GammaTwo)
                sys.constraints.push_back({v, psi_boundary_value(pp, t)});
        }
        auto next = solve_linear(std::move(sys));
        double omega = 0.3, change = 0.0;
        for (int v = 0; v < n; ++v) {
            double updated = (1 - omega) * pk[static_cast<std::size_t>(v)] +
                             omega * next[static_cast<std::size_t>(v)];
            change = std::max(change, std::abs(updated - pk[static_cast<std::size_t>(v)]));
            pk[static_cast<std::size_t>(v)] = updated;
        }
        if (change < 1e-11)
            break;
    }
    for (int v = 0; v < n; ++v)
        CHECK(std::abs(psi[static_cast<std::size_t>(v)] - pk[static_cast<std::size_t>(v)]) <=
              1e-6);
}

TEST_CASE("continuity: constant coefficients give the linear interpolant") {
    auto mesh = generate_rectangle_mesh(6, 3, 1.0, 2.0);
    PhysicalParams pp;
    double A = 0.7, B = 0.2;
    pp.c_inf = A * std::exp(pp.alpha0); // makes rho = A on GammaIn
    pp.rho_gamma2 = B;
    const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
    NodalField phi(n, 1.0), psi(n, 0.0);
    auto rho = solve_continuity(mesh, phi, psi, pp, 0);
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        double x = mesh.vertices[static_cast<std::size_t>(v)].x;
        CHECK(rho[static_cast<std::size_t>(v)] ==
              doctest::Approx(A * (1 - x) + B * x).epsilon(1e-11));
    }
}

TEST_CASE("continuity: zero boundary data gives the zero solution") {
    auto mesh = generate_rectangle_mesh(4, 4, 1.0, 2.0);
    PhysicalParams pp;
    pp.c_inf = 0.0;
    const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
    NodalField phi(n, 0.5), psi(n, -0.1);
    auto rho = solve_continuity(mesh, phi, psi, pp, 1);
    for (double r : rho)
        CHECK(std::abs(r) < 1e-14);
}

TEST_CASE("gummel: electroneutral equilibrium is exact in <= 2 sweeps") {
    auto mesh = generate_rectangle_mesh(8, 16, 1.0, 2.0);
    PhysicalParams pp;
    pp.g_gamma2 = 0.0;
    pp.rho_gamma2 = pp.c_inf * std::exp(-pp.alpha0); // uniform Slotboom data
    SolverTolerances tol;
    NodalField phi(static_cast<std::size_t>(mesh.num_vertices()), 1.0);
    auto st = gummel_solve(mesh, phi, pp, tol);
    REQUIRE(st.converged);
    CHECK(st.gummel_iterations <= 2);
    for (double p : st.psi)
        CHECK(std::abs(p) <= 1e-10);
    for (int i = 0; i < 2; ++i)
        for (double c : st.c[static_cast<std::size_t>(i)])
            CHECK(std::abs(c - pp.c_inf) <= 1e-10);
}

TEST_CASE("gummel on the interface configuration") {
    auto mesh = generate_rectangle_mesh(16, 32, 1.0, 2.0);
    PhysicalParams pp;
    SolverTolerances tol;
    auto phi = interface_profile(mesh, 0.6, 0.08);
    auto st = gummel_solve(mesh, phi, pp, tol);
    REQUIRE(st.converged);

    SUBCASE("nonnegative slotboom variables on the non-obtuse mesh") {
        for (int i = 0; i < 2; ++i)
            for (double r : st.rho[static_cast<std::size_t>(i)])
                CHECK(r >= -1e-12);
    }

    SUBCASE("cation attraction / anion repulsion near the interface") {
        auto band = interface_band(mesh, phi);
        REQUIRE(!band.empty());
        double c1 = 0.0, c2 = 0.0;
        for (int v : band) {
            c1 += st.c[0][static_cast<std::size_t>(v)];
            c2 += st.c[1][static_cast<std::size_t>(v)];
        }
        c1 /= static_cast<double>(band.size());
        c2 /= static_cast<double>(band.size());
        CHECK(c1 > pp.c_inf);
        CHECK(c2 < pp.c_inf);
    }

    SUBCASE("objective is strictly negative") {
        CHECK(objective(mesh, st.c) < 0.0);
    }

    SUBCASE("a-priori L-inf bounds hold") {
        auto rep = linf_bound_report(mesh, st, pp);
        CHECK(rep.ok);
    }

    SUBCASE("gummel progress is monotone") {
        for (std::size_t k = 1; k < st.psi_change_history.size(); ++k)
            CHECK(st.psi_change_history[k] <= st.psi_change_history[k - 1] * 1.000001);
    }

    SUBCASE("warm-started re-solve converges in one sweep to the same state") {
        auto st2 = gummel_solve(mesh, phi, pp, tol, &st);
        CHECK(st2.gummel_iterations <= 1);
        for (int v = 0; v < mesh.num_vertices(); ++v)
            CHECK(std::abs(st2.psi[static_cast<std::size_t>(v)] -
                           st.psi[static_cast<std::size_t>(v)]) <= 1e-9);
    }

    SUBCASE("Dirichlet traces are exact") {
        for (int v = 0; v < mesh.num_vertices(); ++v) {
            VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
            if (t != VertexTag::GammaIn && t != VertexTag::GammaTwo)
                continue;
            auto sv = static_cast<std::size_t>(v);
            CHECK(st.psi[sv] == psi_boundary_value(pp, t));
            CHECK(st.rho[0][sv] == rho_boundary_value(pp, t, 0));
            CHECK(st.rho[1][sv] == rho_boundary_value(pp, t, 1));
        }
    }

    SUBCASE("slotboom roundtrip identity of the recovered concentrations") {
        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            for (int v = 0; v < mesh.num_vertices(); ++v) {
                auto sv = static_cast<std::size_t>(v);
                double expect = slotboom_inverse(st.rho[static_cast<std::size_t>(i)][sv],
                                                 st.psi[sv], phi[sv], z, pp.alpha0);
                CHECK(st.c[static_cast<std::size_t>(i)][sv] == doctest::Approx(expect));
            }
        }
    }
}

TEST_CASE("gummel converges monotonically on the annulus") {
    auto mesh = generate_annulus_mesh(6, 48, 0.2, 1.0);
    PhysicalParams pp;
    SolverTolerances tol;
    NodalField phi(static_cast<std::size_t>(mesh.num_vertices()));
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        Vec2 p = mesh.vertices[static_cast<std::size_t>(v)];
        double r = std::hypot(p.x, p.y);
        phi[static_cast<std::size_t>(v)] = clamp01(0.5 - 0.5 * std::tanh((r - 0.7) / 0.08));
    }
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
        if (t == VertexTag::GammaIn)
            phi[static_cast<std::size_t>(v)] = 1.0;
        else if (t == VertexTag::GammaTwo)
            phi[static_cast<std::size_t>(v)] = 0.0;
    }
    auto st = gummel_solve(mesh, phi, pp, tol);
    REQUIRE(st.converged);
    for (std::size_t k = 1; k < st.psi_change_history.size(); ++k)
        CHECK(st.psi_change_history[k] <= st.psi_change_history[k - 1] * 1.000001);
    for (int i = 0; i < 2; ++i)
        for (double r : st.rho[static_cast<std::size_t>(i)])
            CHECK(r >= -1e-12);
}

TEST_CASE("objective: trivial values and homogeneity") {
    auto mesh = generate_rectangle_mesh(3, 3, 1.0, 1.0);
    const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
    std::array<NodalField, 2> same{NodalField(n, 0.8), NodalField(n, 0.8)};
    CHECK(objective(mesh, same) == doctest::Approx(0.0));
    std::array<NodalField, 2> ones{NodalField(n, 1.0), NodalField(n, 0.0)};
    CHECK(objective(mesh, ones) == doctest::Approx(-1.0).epsilon(1e-13));

    oracle::Rng rng(3);
    std::array<NodalField, 2> c{NodalField(n), NodalField(n)};
    for (std::size_t i = 0; i < n; ++i) {
        c[0][i] = rng.uniform(0, 2);
        c[1][i] = rng.uniform(0, 2);
    }
    double base = objective(mesh, c);
    double a = 3.25;
    std::array<NodalField, 2> scaled = c;
    for (int i = 0; i < 2; ++i)
        for (auto& v : scaled[static_cast<std::size_t>(i)])
            v *= a;
    CHECK(objective(mesh, scaled) == doctest::Approx(a * base).epsilon(1e-12));
}

TEST_CASE("total energy values") {
    auto mesh = generate_rectangle_mesh(10, 20, 1.0, 2.0);
    const std::size_t n = static_cast<std::size_t>(mesh.num_vertices());
    std::array<NodalField, 2> same{NodalField(n, 0.3), NodalField(n, 0.3)};

    auto [w1, what1] = total_energy(mesh, NodalField(n, 1.0), same, 1e-3, 500.0, 2.0);
    CHECK(w1 == doctest::Approx(0.0));
    CHECK(what1 == doctest::Approx(0.0)); // V = 2 = target

    auto [w2, what2] = total_energy(mesh, NodalField(n, 0.5), same, 1e-3, 500.0, 1.0);
    CHECK(w2 == doctest::Approx(31.25).epsilon(1e-12));
    CHECK(what2 == doctest::Approx(31.25).epsilon(1e-12)); // V = 1 = target
}

TEST_CASE("mesh refinement consistency on the equilibrium configuration") {
    PhysicalParams pp;
    pp.g_gamma2 = 0.0;
    pp.rho_gamma2 = pp.c_inf * std::exp(-pp.alpha0);
    SolverTolerances tol;
    for (int nx : {8, 16}) {
        auto mesh = generate_rectangle_mesh(nx, 2 * nx, 1.0, 2.0);
        NodalField phi(static_cast<std::size_t>(mesh.num_vertices()), 1.0);
        auto st = gummel_solve(mesh, phi, pp, tol);
        // the equilibrium is exactly representable on every mesh, so the
        // inter-mesh difference is bounded by the solver tolerance
        for (double p : st.psi)
            CHECK(std::abs(p) <= 1e-10);
        for (double c : st.c[0])
            CHECK(std::abs(c - pp.c_inf) <= 1e-10);
    }
}
