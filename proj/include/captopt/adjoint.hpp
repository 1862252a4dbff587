#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "captopt/error.hpp"
#include "captopt/fem.hpp"
#include "captopt/materials.hpp"
#include "captopt/mesh.hpp"
#include "captopt/pnp.hpp"

namespace captopt {

/// Adjoint state: concentration adjoints s1, s2 and potential adjoint zeta,
/// all vanishing on GammaIn and GammaTwo.
struct AdjointSolution {
    std::array<NodalField, 2> s;
    NodalField zeta;
    double residual = 0.0; // block residual 2-norm after the direct solve
};

/// Assembled Gateaux derivative of the objective, one entry per P1 basis
/// function; entries at Dirichlet vertices of the phase field are zeroed.
using SensitivityLoad = std::vector<double>;

struct AdjointSystem {
    SparseMatrix matrix;       // 3N unknowns interleaved (s1, s2, zeta) per vertex
    std::vector<double> rhs;
};

/// Monolithic Galerkin assembly of the coupled adjoint block system:
///   int D(phi) grad s_i . (grad v + z_i v grad psi - alpha0 v grad phi)
///     + z_i v - z_i zeta v = 0
///   int eps(phi) grad zeta . grad xi + sum_i int D(phi) z_i c_i grad s_i . grad xi = 0
/// Convection uses elementwise-constant P1 gradients; Dirichlet rows on
/// GammaIn/GammaTwo are applied. source_scale multiplies the constant z_i v
/// term only (test hook for linearity checks).
inline AdjointSystem assemble_adjoint_system(const TriangleMesh& mesh, const NodalField& phi,
                                             const StateSolution& state,
                                             const PhysicalParams& pp,
                                             double source_scale = 1.0) {
    const int n = mesh.num_vertices();
    auto dof = [](int vertex, int comp) { return 3 * vertex + comp; };

    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(45 * mesh.num_triangles()));
    std::vector<double> rhs(static_cast<std::size_t>(3 * n), 0.0);

    for (int k = 0; k < mesh.num_triangles(); ++k) {
        ElementGeometry g = element_geometry(mesh, k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        double pbar = (phi[static_cast<std::size_t>(t[0])] + phi[static_cast<std::size_t>(t[1])] +
                       phi[static_cast<std::size_t>(t[2])]) / 3.0;
        double dk = diffusion(pbar, pp);
        double ek = dielectric(pbar, pp);
        Vec2 grad_psi = element_gradient(mesh, g, k, state.psi);
        Vec2 grad_phi = element_gradient(mesh, g, k, phi);

        std::array<double, 2> cbar{};
        for (int i = 0; i < 2; ++i)
            cbar[static_cast<std::size_t>(i)] =
                (state.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[0])] +
                 state.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[1])] +
                 state.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[2])]) / 3.0;

        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            Vec2 w{z * grad_psi.x - pp.alpha0 * grad_phi.x,
                   z * grad_psi.y - pp.alpha0 * grad_phi.y};
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    // int D grad s_i . grad v  (rows: test v at t[a], cols: s_i at t[b])
                    double diff = dk * g.area * dot(g.grad[a], g.grad[b]);
                    // int D grad s_i . (v w):  v = lambda_a, int_K lambda_a = |K|/3
                    double conv = dk * (g.area / 3.0) * dot(w, g.grad[b]);
                    ts.push_back({dof(t[a], i), dof(t[b], i), diff + conv});
                    // -z_i int zeta v (consistent mass)
                    double mloc = g.area / 12.0 * (a == b ? 2.0 : 1.0);
                    ts.push_back({dof(t[a], i), dof(t[b], 2), -z * mloc});
                    // zeta row: eps stiffness and the c-weighted coupling
                    if (i == 0)
                        ts.push_back({dof(t[a], 2), dof(t[b], 2),
                                      ek * g.area * dot(g.grad[a], g.grad[b])});
                    ts.push_back({dof(t[a], 2), dof(t[b], i),
                                  dk * z * cbar[static_cast<std::size_t>(i)] * g.area *
                                      dot(g.grad[a], g.grad[b])});
                }
                rhs[static_cast<std::size_t>(dof(t[a], i))] -=
                    source_scale * z * g.area / 3.0;
            }
        }
    }

    AdjointSystem sys{SparseMatrix::from_triplets(3 * n, std::move(ts)), std::move(rhs)};

    LinearSystem ls{std::move(sys.matrix), std::move(sys.rhs), {}, false};
    for (int v = 0; v < n; ++v) {
        if (mesh.is_dirichlet_vertex(v))
            for (int comp = 0; comp < 3; ++comp)
                ls.constraints.push_back({dof(v, comp), 0.0});
    }
    ls = apply_dirichlet(std::move(ls));
    return {std::move(ls.matrix), std::move(ls.rhs)};
}

/// Direct monolithic solve of the 3N adjoint system.
inline AdjointSolution solve_adjoint(const TriangleMesh& mesh, const NodalField& phi,
                                     const StateSolution& state, const PhysicalParams& pp,
                                     double tol = 1e-9) {
    const int n = mesh.num_vertices();
    AdjointSystem sys = assemble_adjoint_system(mesh, phi, state, pp);

    std::vector<double> x;
    try {
        BandLU lu(sys.matrix);
        x = lu.solve(sys.rhs);
        if (lu.pivot_ratio() > 1e15)
            std::cerr << "solve_adjoint: ill-conditioned block system (pivot ratio "
                      << lu.pivot_ratio() << ")\n";
    } catch (const SolverError& e) {
        throw SolverError(std::string("solve_adjoint: ") + e.what());
    }

    AdjointSolution adj;
    adj.s[0].resize(static_cast<std::size_t>(n));
    adj.s[1].resize(static_cast<std::size_t>(n));
    adj.zeta.resize(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
        adj.s[0][static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(3 * v)];
        adj.s[1][static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(3 * v + 1)];
        adj.zeta[static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(3 * v + 2)];
    }

    auto r = sys.matrix.multiply(x);
    double rn = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
        rn += (r[i] - sys.rhs[i]) * (r[i] - sys.rhs[i]);
    adj.residual = std::sqrt(rn);
    if (adj.residual > tol)
        std::cerr << "solve_adjoint: residual " << adj.residual << " exceeds " << tol << "\n";
    return adj;
}

/// Assembles theta -> <J'(c(phi)), theta> on the P1 basis with a centroid
/// quadrature rule:
///   -sum_i int D'(phi) theta (grad c_i + z_i c_i grad psi - alpha0 c_i grad phi) . grad s_i
///   - int eps'(phi) theta grad psi . grad zeta
///   + sum_i int D(phi) alpha0 c_i grad theta . grad s_i
inline SensitivityLoad assemble_sensitivity(const TriangleMesh& mesh, const NodalField& phi,
                                            const StateSolution& state,
                                            const AdjointSolution& adj,
                                            const PhysicalParams& pp) {
    const int n = mesh.num_vertices();
    SensitivityLoad load(static_cast<std::size_t>(n), 0.0);

    for (int k = 0; k < mesh.num_triangles(); ++k) {
        ElementGeometry g = element_geometry(mesh, k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        double pbar = (phi[static_cast<std::size_t>(t[0])] + phi[static_cast<std::size_t>(t[1])] +
                       phi[static_cast<std::size_t>(t[2])]) / 3.0;
        double dk = diffusion(pbar, pp);
        double dprime = diffusion_derivative(pbar, pp);
        double eprime = dielectric_derivative(pbar, pp);
        Vec2 grad_psi = element_gradient(mesh, g, k, state.psi);
        Vec2 grad_phi = element_gradient(mesh, g, k, phi);
        Vec2 grad_zeta = element_gradient(mesh, g, k, adj.zeta);

        double pointwise = -eprime * dot(grad_psi, grad_zeta);
        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            double cbar =
                (state.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[0])] +
                 state.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[1])] +
                 state.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[2])]) / 3.0;
            Vec2 grad_c = element_gradient(mesh, g, k, state.c[static_cast<std::size_t>(i)]);
            Vec2 grad_s = element_gradient(mesh, g, k, adj.s[static_cast<std::size_t>(i)]);
            Vec2 flux{grad_c.x + z * cbar * grad_psi.x - pp.alpha0 * cbar * grad_phi.x,
                      grad_c.y + z * cbar * grad_psi.y - pp.alpha0 * cbar * grad_phi.y};
            pointwise -= dprime * dot(flux, grad_s);
            // transport term carries grad theta
            for (int a = 0; a < 3; ++a)
                load[static_cast<std::size_t>(t[a])] +=
                    g.area * dk * pp.alpha0 * cbar * dot(g.grad[a], grad_s);
        }
        for (int a = 0; a < 3; ++a)
            load[static_cast<std::size_t>(t[a])] += g.area / 3.0 * pointwise;
    }

    for (int v = 0; v < n; ++v)
        if (mesh.is_dirichlet_vertex(v))
            load[static_cast<std::size_t>(v)] = 0.0;
    return load;
}

inline double directional_derivative(const SensitivityLoad& load, const NodalField& theta) {
    if (load.size() != theta.size())
        throw Error("directional_derivative: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < load.size(); ++i)
        s += load[i] * theta[i];
    return s;
}

// ---------------------------------------------------------------------------
// Discrete adjoint of the stabilized state system
//
// The Galerkin adjoint above discretizes the continuous adjoint equations; the
// state solver, however, uses inverse-average stabilization, a mass-lumped
// Poisson source and nodal Slotboom recovery. The functions below transpose
// that discrete system exactly (including the E_K linearization via third
// divided differences), so the resulting gradient matches central differences
// of the discrete objective down to solver tolerance.

namespace detail {

struct DiscreteAdjointData {
    std::array<InverseAverageDerivative, 2> eavg; // per species
    std::array<NodalField, 2> x;                  // X_i = exp(-z_i psi + alpha0 phi)
};

inline DiscreteAdjointData discrete_adjoint_data(const TriangleMesh& mesh, const NodalField& phi,
                                                 const StateSolution& st,
                                                 const PhysicalParams& pp) {
    DiscreteAdjointData d;
    const int n = mesh.num_vertices();
    for (int i = 0; i < 2; ++i) {
        int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
        d.eavg[static_cast<std::size_t>(i)] = elementwise_inverse_average_with_derivative(
            mesh, drift_exponent(phi, st.psi, z, pp.alpha0));
        d.x[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(n));
        for (int v = 0; v < n; ++v)
            d.x[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)] = std::exp(
                -z * st.psi[static_cast<std::size_t>(v)] +
                pp.alpha0 * phi[static_cast<std::size_t>(v)]);
    }
    return d;
}

} // namespace detail

inline AdjointSystem assemble_adjoint_system_discrete(const TriangleMesh& mesh,
                                                      const NodalField& phi,
                                                      const StateSolution& st,
                                                      const PhysicalParams& pp) {
    const int n = mesh.num_vertices();
    auto dof = [](int vertex, int comp) { return 3 * vertex + comp; };
    auto data = detail::discrete_adjoint_data(mesh, phi, st, pp);
    auto lumped = unit_load(mesh);

    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(60 * mesh.num_triangles()));
    std::vector<double> rhs(static_cast<std::size_t>(3 * n), 0.0);

    for (int k = 0; k < mesh.num_triangles(); ++k) {
        ElementGeometry g = element_geometry(mesh, k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        auto sk = static_cast<std::size_t>(k);
        double pbar = (phi[static_cast<std::size_t>(t[0])] + phi[static_cast<std::size_t>(t[1])] +
                       phi[static_cast<std::size_t>(t[2])]) / 3.0;
        double dk = diffusion(pbar, pp);
        double ek = dielectric(pbar, pp);
        double third = g.area / 3.0;

        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            double e_k = data.eavg[static_cast<std::size_t>(i)].value[sk];
            const auto& de = data.eavg[static_cast<std::size_t>(i)].d_du[sk];
            Vec2 grad_rho = element_gradient(mesh, g, k, st.rho[static_cast<std::size_t>(i)]);
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    // lambda_i rows: stabilized stiffness S_i
                    ts.push_back({dof(t[a], i), dof(t[b], i),
                                  dk * e_k * g.area * dot(g.grad[a], g.grad[b])});
                    // psi rows, lambda_i columns: transpose of dR_i/dpsi
                    double flux_b = g.area * dot(g.grad[b], grad_rho);
                    ts.push_back({dof(t[a], 2), dof(t[b], i),
                                  dk * (-z) * de[static_cast<std::size_t>(a)] * flux_b});
                    // psi rows, mu columns: eps stiffness (once) minus dB/dpsi transpose
                    if (i == 0)
                        ts.push_back({dof(t[a], 2), dof(t[b], 2),
                                      ek * g.area * dot(g.grad[a], g.grad[b])});
                    double rho_b =
                        st.rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[b])];
                    ts.push_back({dof(t[a], 2), dof(t[b], 2),
                                  third * z * z * rho_b * de[static_cast<std::size_t>(a)]});
                }
                // lambda_i rows, mu column: -z_i * lumped E-weighted mass (diagonal)
                ts.push_back({dof(t[a], i), dof(t[a], 2), -z * third * e_k});
            }
        }
    }

    for (int v = 0; v < n; ++v) {
        auto sv = static_cast<std::size_t>(v);
        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            rhs[static_cast<std::size_t>(dof(v, i))] =
                z * lumped[sv] * data.x[static_cast<std::size_t>(i)][sv];
        }
        rhs[static_cast<std::size_t>(dof(v, 2))] =
            -lumped[sv] * (st.c[0][sv] + st.c[1][sv]);
    }

    LinearSystem ls{SparseMatrix::from_triplets(3 * n, std::move(ts)), std::move(rhs), {}, false};
    for (int v = 0; v < n; ++v)
        if (mesh.is_dirichlet_vertex(v))
            for (int comp = 0; comp < 3; ++comp)
                ls.constraints.push_back({dof(v, comp), 0.0});
    ls = apply_dirichlet(std::move(ls));
    return {std::move(ls.matrix), std::move(ls.rhs)};
}

inline AdjointSolution solve_adjoint_discrete(const TriangleMesh& mesh, const NodalField& phi,
                                              const StateSolution& st, const PhysicalParams& pp,
                                              double tol = 1e-9) {
    const int n = mesh.num_vertices();
    AdjointSystem sys = assemble_adjoint_system_discrete(mesh, phi, st, pp);
    std::vector<double> x;
    try {
        BandLU lu(sys.matrix);
        x = lu.solve(sys.rhs);
    } catch (const SolverError& e) {
        throw SolverError(std::string("solve_adjoint_discrete: ") + e.what());
    }
    AdjointSolution adj;
    adj.s[0].resize(static_cast<std::size_t>(n));
    adj.s[1].resize(static_cast<std::size_t>(n));
    adj.zeta.resize(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
        adj.s[0][static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(3 * v)];
        adj.s[1][static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(3 * v + 1)];
        adj.zeta[static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(3 * v + 2)];
    }
    auto r = sys.matrix.multiply(x);
    double rn = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
        rn += (r[i] - sys.rhs[i]) * (r[i] - sys.rhs[i]);
    adj.residual = std::sqrt(rn);
    if (adj.residual > tol)
        std::cerr << "solve_adjoint_discrete: residual " << adj.residual << " exceeds " << tol
                  << "\n";
    return adj;
}

/// Gradient of the discrete objective: dJ/dphi_v = dJ/dphi_v
/// + sum_i lambda_i' dR_i/dphi + mu' dP/dphi, entries zeroed on the phase
/// field's Dirichlet set.
inline SensitivityLoad assemble_sensitivity_discrete(const TriangleMesh& mesh,
                                                     const NodalField& phi,
                                                     const StateSolution& st,
                                                     const AdjointSolution& adj,
                                                     const PhysicalParams& pp) {
    const int n = mesh.num_vertices();
    auto data = detail::discrete_adjoint_data(mesh, phi, st, pp);
    auto lumped = unit_load(mesh);
    SensitivityLoad load(static_cast<std::size_t>(n), 0.0);

    for (int v = 0; v < n; ++v) {
        auto sv = static_cast<std::size_t>(v);
        load[sv] = -pp.alpha0 * lumped[sv] * (st.c[0][sv] - st.c[1][sv]);
    }

    for (int k = 0; k < mesh.num_triangles(); ++k) {
        ElementGeometry g = element_geometry(mesh, k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        auto sk = static_cast<std::size_t>(k);
        double pbar = (phi[static_cast<std::size_t>(t[0])] + phi[static_cast<std::size_t>(t[1])] +
                       phi[static_cast<std::size_t>(t[2])]) / 3.0;
        double dk = diffusion(pbar, pp);
        double dprime = diffusion_derivative(pbar, pp);
        double eprime = dielectric_derivative(pbar, pp);
        double third = g.area / 3.0;
        Vec2 grad_psi = element_gradient(mesh, g, k, st.psi);

        for (int vloc = 0; vloc < 3; ++vloc) {
            auto sv = static_cast<std::size_t>(t[vloc]);
            double acc = 0.0;
            for (int i = 0; i < 2; ++i) {
                int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
                double e_k = data.eavg[static_cast<std::size_t>(i)].value[sk];
                double de_v =
                    data.eavg[static_cast<std::size_t>(i)].d_du[sk][static_cast<std::size_t>(vloc)];
                Vec2 grad_rho = element_gradient(mesh, g, k, st.rho[static_cast<std::size_t>(i)]);
                for (int a = 0; a < 3; ++a) {
                    double lam = adj.s[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[a])];
                    double mu = adj.zeta[static_cast<std::size_t>(t[a])];
                    double flux_a = g.area * dot(g.grad[a], grad_rho);
                    // lambda_i' dR_i/dphi
                    acc += lam * (dprime / 3.0 * e_k + dk * pp.alpha0 * de_v) * flux_a;
                    // mu' (-dB/dphi)
                    double rho_a =
                        st.rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(t[a])];
                    acc -= mu * third * z * rho_a * pp.alpha0 * de_v;
                }
            }
            // mu' dA_eps/dphi psi
            for (int a = 0; a < 3; ++a) {
                double mu = adj.zeta[static_cast<std::size_t>(t[a])];
                acc += mu * eprime / 3.0 * g.area * dot(g.grad[a], grad_psi);
            }
            load[sv] += acc;
        }
    }

    for (int v = 0; v < n; ++v)
        if (mesh.is_dirichlet_vertex(v))
            load[static_cast<std::size_t>(v)] = 0.0;
    return load;
}

} // namespace captopt
