#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "captopt/error.hpp"
#include "captopt/fem.hpp"
#include "captopt/materials.hpp"
#include "captopt/mesh.hpp"

namespace captopt {

struct SolverTolerances {
    double gummel_tol = 1e-8;    // L-inf change of psi between sweeps
    int gummel_max_iter = 200;
    double newton_tol = 1e-11;   // residual 2-norm of the Poisson-Boltzmann solve
    int newton_max_iter = 40;
    double newton_damping = 1.0; // initial step fraction, halved on failure

    void validate() const {
        if (!(gummel_tol > 0.0) || !(newton_tol > 0.0))
            throw Error("SolverTolerances: tolerances must be positive");
        if (gummel_max_iter < 1 || newton_max_iter < 1)
            throw Error("SolverTolerances: iteration counts must be positive");
        if (!(newton_damping > 0.0) || newton_damping > 1.0)
            throw Error("SolverTolerances: damping must lie in (0,1]");
    }
};

/// Converged PNP state: potential, Slotboom variables and recovered
/// concentrations, plus Gummel iteration bookkeeping.
struct StateSolution {
    NodalField psi;
    std::array<NodalField, 2> rho;
    std::array<NodalField, 2> c;
    int gummel_iterations = 0;
    bool converged = false;
    double residual = 0.0;                   // last L-inf psi change
    std::vector<double> psi_change_history;  // one entry per sweep
};

// ---------------------------------------------------------------------------
// Slotboom transform

inline double slotboom_forward(double c, double psi, double phi, int z, double alpha0) {
    double e = z * psi - alpha0 * phi;
    if (std::abs(e) > 700.0)
        throw Error("slotboom_forward: exponent " + std::to_string(e) + " would overflow");
    return c * std::exp(e);
}

inline double slotboom_inverse(double rho, double psi, double phi, int z, double alpha0) {
    double e = -z * psi + alpha0 * phi;
    if (std::abs(e) > 700.0)
        throw Error("slotboom_inverse: exponent " + std::to_string(e) + " would overflow");
    return rho * std::exp(e);
}

// ---------------------------------------------------------------------------
// Boundary data

/// Potential boundary value at a Dirichlet vertex.
inline double psi_boundary_value(const PhysicalParams& pp, VertexTag tag) {
    switch (tag) {
    case VertexTag::GammaIn: return pp.g_gammain;
    case VertexTag::GammaTwo: return pp.g_gamma2;
    default: throw Error("psi_boundary_value: not a Dirichlet vertex");
    }
}

/// Slotboom boundary value: on GammaIn the reservoir data transformed with
/// phi = 1, on GammaTwo the configured value (zero in the physical model).
inline double rho_boundary_value(const PhysicalParams& pp, VertexTag tag, int species) {
    int z = PhysicalParams::valence[static_cast<std::size_t>(species)];
    switch (tag) {
    case VertexTag::GammaIn:
        return slotboom_forward(pp.c_inf, pp.g_gammain, 1.0, z, pp.alpha0);
    case VertexTag::GammaTwo:
        return pp.rho_gamma2;
    default: throw Error("rho_boundary_value: not a Dirichlet vertex");
    }
}

namespace detail {

inline ElementCoefficient elementwise_diffusion(const TriangleMesh& mesh, const NodalField& phi,
                                                const PhysicalParams& pp) {
    ElementCoefficient d(static_cast<std::size_t>(mesh.num_triangles()));
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        double pbar = (phi[static_cast<std::size_t>(t[0])] + phi[static_cast<std::size_t>(t[1])] +
                       phi[static_cast<std::size_t>(t[2])]) / 3.0;
        d[static_cast<std::size_t>(k)] = diffusion(pbar, pp);
    }
    return d;
}

inline ElementCoefficient elementwise_dielectric(const TriangleMesh& mesh, const NodalField& phi,
                                                 const PhysicalParams& pp) {
    ElementCoefficient e(static_cast<std::size_t>(mesh.num_triangles()));
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        double pbar = (phi[static_cast<std::size_t>(t[0])] + phi[static_cast<std::size_t>(t[1])] +
                       phi[static_cast<std::size_t>(t[2])]) / 3.0;
        e[static_cast<std::size_t>(k)] = dielectric(pbar, pp);
    }
    return e;
}

/// Exponent field alpha0*phi - z*psi for the inverse-average coefficient.
inline NodalField drift_exponent(const NodalField& phi, const NodalField& psi, int z,
                                 double alpha0) {
    NodalField u(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i)
        u[i] = alpha0 * phi[i] - z * psi[i];
    return u;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Continuity solve (linear, stabilized)

/// Solves the stabilized continuity system for one species given psi and phi:
/// sum_K E(alpha0 phi - z psi)_K int_K D(phi) grad rho . grad v = 0 with the
/// Slotboom boundary data. Reports (does not fix) maximum-principle violations.
inline NodalField solve_continuity(const TriangleMesh& mesh, const NodalField& phi,
                                   const NodalField& psi, const PhysicalParams& pp,
                                   int species) {
    const int n = mesh.num_vertices();
    int z = PhysicalParams::valence[static_cast<std::size_t>(species)];
    auto dcoef = detail::elementwise_diffusion(mesh, phi, pp);
    auto eavg = elementwise_inverse_average(mesh, detail::drift_exponent(phi, psi, z, pp.alpha0));
    ElementCoefficient coeff(dcoef.size());
    for (std::size_t k = 0; k < coeff.size(); ++k)
        coeff[k] = dcoef[k] * eavg[k];

    LinearSystem sys{assemble_weighted_stiffness(mesh, coeff),
                     std::vector<double>(static_cast<std::size_t>(n), 0.0), {}, false};
    double max_bc = 0.0;
    for (int v = 0; v < n; ++v) {
        VertexTag tag = mesh.vertex_tags[static_cast<std::size_t>(v)];
        if (tag == VertexTag::GammaIn || tag == VertexTag::GammaTwo) {
            double bv = rho_boundary_value(pp, tag, species);
            sys.constraints.push_back({v, bv});
            max_bc = std::max(max_bc, bv);
        }
    }
    auto rho = solve_linear(std::move(sys));

    for (int v = 0; v < n; ++v) {
        double r = rho[static_cast<std::size_t>(v)];
        if (r < -1e-12 || r > max_bc * (1.0 + 1e-12) + 1e-12)
            std::cerr << "solve_continuity: maximum principle violated at node " << v
                      << " (rho = " << r << ", boundary max = " << max_bc << ")\n";
    }
    return rho;
}

// ---------------------------------------------------------------------------
// Poisson-Boltzmann solve (damped quasi-Newton with frozen inverse averages)

struct PBDiagnostics {
    std::vector<double> residual_history;
    bool converged = false;
    int iterations = 0;
};

/// Solves int eps(phi) grad psi . grad zeta = sum_K sum_i E_K z_i int_K rho_i zeta
/// for psi with Dirichlet data g. The source rows are mass-lumped and E_K is
/// frozen within each Newton step; a residual line search keeps descent.
inline NodalField solve_poisson_boltzmann(const TriangleMesh& mesh, const NodalField& phi,
                                          const std::array<NodalField, 2>& rho,
                                          const PhysicalParams& pp, const SolverTolerances& tol,
                                          const NodalField* psi_init = nullptr,
                                          PBDiagnostics* diag = nullptr) {
    const int n = mesh.num_vertices();
    auto A_eps = assemble_weighted_stiffness(mesh, detail::elementwise_dielectric(mesh, phi, pp));

    std::vector<char> dirichlet(static_cast<std::size_t>(n), 0);
    NodalField psi(static_cast<std::size_t>(n), 0.0);
    if (psi_init) {
        if (static_cast<int>(psi_init->size()) != n)
            throw Error("solve_poisson_boltzmann: warm start size mismatch");
        psi = *psi_init;
    }
    for (int v = 0; v < n; ++v) {
        VertexTag tag = mesh.vertex_tags[static_cast<std::size_t>(v)];
        if (tag == VertexTag::GammaIn || tag == VertexTag::GammaTwo) {
            dirichlet[static_cast<std::size_t>(v)] = 1;
            psi[static_cast<std::size_t>(v)] = psi_boundary_value(pp, tag);
        }
    }

    // residual F(psi) = A_eps psi - s(psi) on free rows, with the lumped source
    // s_a = sum_{K ni a} |K|/3 sum_i z_i rho_i(a) E_K(alpha0 phi - z_i psi).
    auto source = [&](const NodalField& p, std::array<ElementCoefficient, 2>& eavg) {
        NodalField s(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < 2; ++i) {
            int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
            eavg[static_cast<std::size_t>(i)] =
                elementwise_inverse_average(mesh, detail::drift_exponent(phi, p, z, pp.alpha0));
        }
        for (int k = 0; k < mesh.num_triangles(); ++k) {
            double w = mesh.signed_area(k) / 3.0;
            const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
            for (int a : t)
                for (int i = 0; i < 2; ++i)
                    s[static_cast<std::size_t>(a)] +=
                        w * PhysicalParams::valence[static_cast<std::size_t>(i)] *
                        rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] *
                        eavg[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        }
        return s;
    };

    auto residual_norm = [&](const NodalField& p, std::array<ElementCoefficient, 2>& eavg,
                             NodalField& F) {
        NodalField s = source(p, eavg);
        F = A_eps.multiply(p);
        double norm2 = 0.0;
        for (int v = 0; v < n; ++v) {
            if (dirichlet[static_cast<std::size_t>(v)]) {
                F[static_cast<std::size_t>(v)] = 0.0;
            } else {
                F[static_cast<std::size_t>(v)] -= s[static_cast<std::size_t>(v)];
                norm2 += F[static_cast<std::size_t>(v)] * F[static_cast<std::size_t>(v)];
            }
        }
        return std::sqrt(norm2);
    };

    std::array<ElementCoefficient, 2> eavg;
    NodalField F;
    double fnorm = residual_norm(psi, eavg, F);
    if (diag) {
        diag->residual_history.clear();
        diag->residual_history.push_back(fnorm);
    }

    int it = 0;
    bool ok = fnorm <= tol.newton_tol;
    while (!ok && it < tol.newton_max_iter) {
        ++it;
        // quasi-Newton matrix: A_eps + lumped reaction sum_i z_i^2 rho_i E_K
        std::vector<double> react(static_cast<std::size_t>(n), 0.0);
        for (int k = 0; k < mesh.num_triangles(); ++k) {
            double w = mesh.signed_area(k) / 3.0;
            const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
            for (int a : t)
                for (int i = 0; i < 2; ++i) {
                    int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
                    react[static_cast<std::size_t>(a)] +=
                        w * z * z * std::max(0.0, rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)]) *
                        eavg[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                }
        }
        SparseMatrix J = A_eps;
        J.add_to_diagonal(react);
        LinearSystem sys{std::move(J), F, {}, false};
        for (auto& v : sys.rhs)
            v = -v;
        for (int v = 0; v < n; ++v)
            if (dirichlet[static_cast<std::size_t>(v)])
                sys.constraints.push_back({v, 0.0});
        auto delta = solve_linear(std::move(sys));

        double step = tol.newton_damping;
        NodalField trial(static_cast<std::size_t>(n));
        std::array<ElementCoefficient, 2> eavg_trial;
        NodalField F_trial;
        double fnorm_trial = 0.0;
        bool descended = false;
        for (int halve = 0; halve <= 20; ++halve) {
            for (int v = 0; v < n; ++v)
                trial[static_cast<std::size_t>(v)] =
                    psi[static_cast<std::size_t>(v)] + step * delta[static_cast<std::size_t>(v)];
            fnorm_trial = residual_norm(trial, eavg_trial, F_trial);
            if (fnorm_trial < fnorm) {
                descended = true;
                break;
            }
            step *= 0.5;
        }
        if (!descended)
            break; // stalled; return best iterate flagged below
        psi = trial;
        eavg = eavg_trial;
        F = F_trial;
        fnorm = fnorm_trial;
        if (diag)
            diag->residual_history.push_back(fnorm);
        ok = fnorm <= tol.newton_tol;
    }

    if (diag) {
        diag->converged = ok;
        diag->iterations = it;
    }
    if (!ok)
        std::cerr << "solve_poisson_boltzmann: not converged after " << it
                  << " iterations (residual " << fnorm << ")\n";
    return psi;
}

// ---------------------------------------------------------------------------
// Gummel fixed point

/// Alternates continuity and Poisson-Boltzmann solves until the potential
/// stops moving in L-inf. Warm starts reuse a previous StateSolution.
inline StateSolution gummel_solve(const TriangleMesh& mesh, const NodalField& phi,
                                  const PhysicalParams& pp, const SolverTolerances& tol,
                                  const StateSolution* warm_start = nullptr) {
    const int n = mesh.num_vertices();
    if (static_cast<int>(phi.size()) != n)
        throw Error("gummel_solve: phi size mismatch");

    StateSolution st;
    st.psi.assign(static_cast<std::size_t>(n), 0.0);
    if (warm_start && static_cast<int>(warm_start->psi.size()) == n)
        st.psi = warm_start->psi;
    for (int v = 0; v < n; ++v) {
        VertexTag tag = mesh.vertex_tags[static_cast<std::size_t>(v)];
        if (tag == VertexTag::GammaIn || tag == VertexTag::GammaTwo)
            st.psi[static_cast<std::size_t>(v)] = psi_boundary_value(pp, tag);
    }

    for (int sweep = 1; sweep <= tol.gummel_max_iter; ++sweep) {
        for (int i = 0; i < 2; ++i)
            st.rho[static_cast<std::size_t>(i)] = solve_continuity(mesh, phi, st.psi, pp, i);
        NodalField psi_new = solve_poisson_boltzmann(mesh, phi, st.rho, pp, tol, &st.psi);
        double change = 0.0;
        for (int v = 0; v < n; ++v)
            change = std::max(change,
                              std::abs(psi_new[static_cast<std::size_t>(v)] -
                                       st.psi[static_cast<std::size_t>(v)]));
        st.psi = std::move(psi_new);
        st.psi_change_history.push_back(change);
        st.gummel_iterations = sweep;
        st.residual = change;
        if (change <= tol.gummel_tol) {
            st.converged = true;
            break;
        }
    }

    for (int i = 0; i < 2; ++i) {
        int z = PhysicalParams::valence[static_cast<std::size_t>(i)];
        st.c[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(n));
        for (int v = 0; v < n; ++v)
            st.c[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)] =
                slotboom_inverse(st.rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)],
                                 st.psi[static_cast<std::size_t>(v)],
                                 phi[static_cast<std::size_t>(v)], z, pp.alpha0);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Objective and energies

/// J = -int (c1 - c2), exact for the P1 interpolants.
inline double objective(const TriangleMesh& mesh, const std::array<NodalField, 2>& c) {
    NodalField net(c[0].size());
    for (std::size_t i = 0; i < net.size(); ++i)
        net[i] = c[0][i] - c[1][i];
    return -integrate_nodal(mesh, net);
}

/// Ginzburg-Landau part: exact gradient integral plus nodal quadrature of the
/// double well.
inline double ginzburg_landau_energy(const TriangleMesh& mesh, const NodalField& phi,
                                     double kappa) {
    double grad_term = 0.0;
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        ElementGeometry g = element_geometry(mesh, k);
        Vec2 gp = element_gradient(mesh, g, k, phi);
        grad_term += g.area * dot(gp, gp);
    }
    NodalField w(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i)
        w[i] = double_well(phi[i]);
    return 0.5 * kappa * grad_term + integrate_nodal(mesh, w) / kappa;
}

/// Total free energy W = GL + J and its volume-penalized variant.
inline std::pair<double, double> total_energy(const TriangleMesh& mesh, const NodalField& phi,
                                              const std::array<NodalField, 2>& c, double kappa,
                                              double beta, double v_target) {
    NodalField clamped(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i)
        clamped[i] = clamp01(phi[i]);
    double vol = integrate_nodal(mesh, clamped);
    double w = ginzburg_landau_energy(mesh, phi, kappa) + objective(mesh, c);
    double w_hat = w + 0.5 * beta * (vol - v_target) * (vol - v_target);
    return {w, w_hat};
}

// ---------------------------------------------------------------------------
// Runtime L-inf bound checks

struct LinfBoundReport {
    bool ok = true;
    double rho_min = 0.0, rho_max = 0.0, rho_bound = 0.0;
    double psi_min = 0.0, psi_max = 0.0, psi_lower = 0.0, psi_upper = 0.0;
};

/// Checks the a-priori bounds: 0 <= rho_i <= max boundary value and
/// min(inf g, -U) <= psi <= max(sup g, U) with U from the positive Slotboom
/// boundary values.
inline LinfBoundReport linf_bound_report(const TriangleMesh& mesh, const StateSolution& st,
                                         const PhysicalParams& pp, double slack = 1e-9) {
    LinfBoundReport rep;
    double rho_bc_max = 0.0;
    double u_plus = 0.0;
    for (VertexTag tag : {VertexTag::GammaIn, VertexTag::GammaTwo}) {
        for (int i = 0; i < 2; ++i) {
            double bv = rho_boundary_value(pp, tag, i);
            rho_bc_max = std::max(rho_bc_max, bv);
            if (bv > 0.0)
                u_plus = std::max(u_plus, std::abs(std::log(bv)));
        }
    }
    double g_min = std::min(pp.g_gammain, pp.g_gamma2);
    double g_max = std::max(pp.g_gammain, pp.g_gamma2);
    rep.rho_bound = rho_bc_max;
    rep.psi_lower = std::min(g_min, -u_plus);
    rep.psi_upper = std::max(g_max, u_plus);

    rep.rho_min = 1e300;
    rep.rho_max = -1e300;
    for (int i = 0; i < 2; ++i)
        for (double r : st.rho[static_cast<std::size_t>(i)]) {
            rep.rho_min = std::min(rep.rho_min, r);
            rep.rho_max = std::max(rep.rho_max, r);
        }
    rep.psi_min = 1e300;
    rep.psi_max = -1e300;
    for (double p : st.psi) {
        rep.psi_min = std::min(rep.psi_min, p);
        rep.psi_max = std::max(rep.psi_max, p);
    }
    (void)mesh;
    rep.ok = rep.rho_min >= -slack && rep.rho_max <= rep.rho_bound + slack &&
             rep.psi_min >= rep.psi_lower - slack && rep.psi_max <= rep.psi_upper + slack;
    return rep;
}

} // namespace captopt
