#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "captopt/adjoint.hpp"
#include "captopt/error.hpp"
#include "captopt/fem.hpp"
#include "captopt/materials.hpp"
#include "captopt/mesh.hpp"
#include "captopt/pnp.hpp"

namespace captopt {

/// Sign of the objective-sensitivity forcing in the gradient-flow step.
/// Descent uses -j' (consistent with the steepest-descent flow); Printed is
/// the +j' variant, kept selectable because it breaks energy monotonicity.
enum class SensitivitySign { Descent, Printed };

/// Which adjoint realization feeds the optimizer: Consistent transposes the
/// stabilized discrete state exactly; Galerkin discretizes the continuous
/// adjoint equations directly.
enum class SensitivityModel { Consistent, Galerkin };

struct OptimParams {
    double kappa = 1e-3;    // interface parameter
    double beta = 500.0;    // volume penalty
    double nu = 2e-4;       // pseudo-time step
    double lambda1 = 1.0;   // zeroth-order stabilization
    double lambda2 = 1e-2;  // second-order stabilization
    double v_target = 1.0;  // target electrolyte volume
    int outer_iters = 2000;
    int state_update_stride = 10;
    bool projection_enabled = true;
    SensitivitySign sensitivity_sign = SensitivitySign::Descent;
    SensitivityModel sensitivity_model = SensitivityModel::Galerkin;
    bool early_stop = false;

    void validate() const {
        if (!(kappa > 0.0) || !(beta > 0.0) || !(nu > 0.0) || !(lambda1 > 0.0) ||
            !(lambda2 > 0.0))
            throw Error("OptimParams: kappa, beta, nu, lambda1, lambda2 must be positive");
        if (!(v_target > 0.0))
            throw Error("OptimParams: v_target must be positive");
        if (outer_iters < 0)
            throw Error("OptimParams: outer_iters must be >= 0");
        if (state_update_stride < 1)
            throw Error("OptimParams: state_update_stride must be >= 1");
    }
};

struct HistoryRecord {
    int iter = 0;
    double objective = 0.0;         // J at the most recent state solve (lagged)
    double energy = 0.0;            // W = Ginzburg-Landau + lagged J
    double penalized_energy = 0.0;  // W + beta/2 (V - V0)^2
    double volume = 0.0;
    double volume_error = 0.0;
    int gummel_iters = 0;
    double wall_time_s = 0.0;
    // lagged-model energy GL + penalty + J_r + <sens, phi - phi_r> of the
    // projected iterate, and of the raw linear-solve iterate before
    // projection. The scheme decreases the raw value every step; projection
    // at active bounds can take part of that decrease back.
    double w_hat_lagged = 0.0;
    double w_hat_lagged_step = 0.0;
    bool refreshed = false;
};

using OptimizationHistory = std::vector<HistoryRecord>;

/// V(phi) = integral of the nodewise-clamped field.
inline double volume(const TriangleMesh& mesh, const NodalField& phi) {
    NodalField clamped(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i)
        clamped[i] = clamp01(phi[i]);
    return integrate_nodal(mesh, clamped);
}

/// phi0 = 0.5 + 0.5 cos(m pi x) cos(m pi y), overridden to 1 on GammaIn and
/// 0 on GammaTwo.
inline NodalField initial_phase_field(const TriangleMesh& mesh, int m) {
    if (m < 1)
        throw Error("initial_phase_field: m must be >= 1");
    NodalField phi(static_cast<std::size_t>(mesh.num_vertices()));
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        Vec2 p = mesh.vertices[static_cast<std::size_t>(v)];
        phi[static_cast<std::size_t>(v)] =
            0.5 + 0.5 * std::cos(m * M_PI * p.x) * std::cos(m * M_PI * p.y);
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

/// Nodewise projection onto [0,1]; idempotent.
inline NodalField project_field(NodalField phi) {
    for (auto& v : phi)
        v = clamp01(v);
    return phi;
}

/// Precomputed pieces of the semi-implicit step. The system matrix
/// (1/nu + L1) M + (kappa + L2) A is constant along the flow, so it is
/// factorized exactly once per run.
struct GradientFlowSystem {
    SparseMatrix mass;
    SparseMatrix stiffness;
    std::vector<double> load;     // integral of each basis function
    std::vector<DirichletBC> dirichlet;
    std::vector<double> rhs_correction; // column elimination of the fixed values
    std::optional<BandLU> factorization;
};

/// scale is a test hook multiplying M, A and the load consistently
/// (homogeneity of the step).
inline GradientFlowSystem make_gradient_flow_system(const TriangleMesh& mesh,
                                                    const OptimParams& op,
                                                    bool with_dirichlet = true,
                                                    double scale = 1.0) {
    GradientFlowSystem ws;
    ws.mass = assemble_mass(mesh);
    ws.stiffness = assemble_weighted_stiffness(
        mesh, ElementCoefficient(static_cast<std::size_t>(mesh.num_triangles()), 1.0));
    if (scale != 1.0) {
        ws.mass.scale(scale);
        ws.stiffness.scale(scale);
    }
    ws.load = unit_load(mesh);
    for (auto& v : ws.load)
        v *= scale;

    SparseMatrix lhs = SparseMatrix::axpby(1.0 / op.nu + op.lambda1, ws.mass,
                                           op.kappa + op.lambda2, ws.stiffness);
    const int n = mesh.num_vertices();
    if (with_dirichlet) {
        for (int v = 0; v < n; ++v) {
            VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
            if (t == VertexTag::GammaIn)
                ws.dirichlet.push_back({v, 1.0});
            else if (t == VertexTag::GammaTwo)
                ws.dirichlet.push_back({v, 0.0});
        }
    }

    std::vector<double> bc(static_cast<std::size_t>(n), 0.0);
    for (const auto& d : ws.dirichlet)
        bc[static_cast<std::size_t>(d.index)] = d.value;
    ws.rhs_correction = lhs.multiply(bc);
    for (auto& v : ws.rhs_correction)
        v = -v;

    LinearSystem sys{std::move(lhs), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                     ws.dirichlet, false};
    sys = apply_dirichlet(std::move(sys));
    ws.factorization.emplace(std::move(sys.matrix));
    return ws;
}

/// One stabilized semi-implicit step:
///   [(1/nu + L1) M + (kappa + L2) A] phi' =
///     (1/nu + L1) M phi + L2 A phi
///     - (1/kappa) M w'(phi) - beta (V(phi) - V0) l + sign * sens,
/// with phi = 1 on GammaIn and 0 on GammaTwo, then projection onto [0,1].
inline NodalField gradient_flow_step(const TriangleMesh& mesh, const NodalField& phi_n,
                                     const SensitivityLoad& sens, const OptimParams& op,
                                     const GradientFlowSystem& ws,
                                     NodalField* raw_iterate = nullptr) {
    const int n = mesh.num_vertices();
    if (static_cast<int>(phi_n.size()) != n || static_cast<int>(sens.size()) != n)
        throw Error("gradient_flow_step: dimension mismatch");

    double sign = op.sensitivity_sign == SensitivitySign::Descent ? -1.0 : 1.0;
    double vol_force = -op.beta * (volume(mesh, phi_n) - op.v_target);

    NodalField mass_arg(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v)
        mass_arg[static_cast<std::size_t>(v)] =
            (1.0 / op.nu + op.lambda1) * phi_n[static_cast<std::size_t>(v)] -
            double_well_derivative(phi_n[static_cast<std::size_t>(v)]) / op.kappa;
    auto rhs = ws.mass.multiply(mass_arg);
    auto stiff_part = ws.stiffness.multiply(phi_n);
    for (int v = 0; v < n; ++v) {
        auto sv = static_cast<std::size_t>(v);
        rhs[sv] += op.lambda2 * stiff_part[sv] + vol_force * ws.load[sv] + sign * sens[sv];
        rhs[sv] += ws.rhs_correction[sv];
    }
    for (const auto& d : ws.dirichlet)
        rhs[static_cast<std::size_t>(d.index)] = d.value;

    auto phi = ws.factorization->solve(rhs);
    for (double v : phi)
        if (!std::isfinite(v))
            throw SolverError("gradient_flow_step: nonfinite phase field");
    if (raw_iterate)
        *raw_iterate = phi;
    if (op.projection_enabled)
        phi = project_field(std::move(phi));
    return phi;
}

/// Convenience overload forwarding the relevant OptimParams fields.
inline std::pair<double, double> total_energy(const TriangleMesh& mesh, const NodalField& phi,
                                              const std::array<NodalField, 2>& c,
                                              const OptimParams& op) {
    return total_energy(mesh, phi, c, op.kappa, op.beta, op.v_target);
}

struct OptimizationResult {
    NodalField phi;
    StateSolution state;
    OptimizationHistory history;
};

using SnapshotCallback =
    std::function<void(int iter, const NodalField& phi, const StateSolution& state)>;

/// Outer loop: refresh state/adjoint/sensitivity every state_update_stride
/// steps (including step 0), advance the gradient flow every step, record one
/// history row per iteration. A non-converged Gummel solve is retried once
/// from a cold start.
inline OptimizationResult run_optimization(const TriangleMesh& mesh, const PhysicalParams& pp,
                                           const OptimParams& op, const SolverTolerances& tol,
                                           const NodalField& phi0,
                                           const SnapshotCallback& snapshot = {}) {
    pp.validate();
    op.validate();
    tol.validate();
    const int n = mesh.num_vertices();
    if (static_cast<int>(phi0.size()) != n)
        throw Error("run_optimization: phi0 size mismatch");
    double domain_area = integrate_nodal(mesh, NodalField(static_cast<std::size_t>(n), 1.0));
    if (!(op.v_target < domain_area))
        throw Error("run_optimization: v_target must be below the domain area " +
                    std::to_string(domain_area));
    for (int v = 0; v < n; ++v) {
        VertexTag t = mesh.vertex_tags[static_cast<std::size_t>(v)];
        double want = t == VertexTag::GammaIn ? 1.0 : 0.0;
        if ((t == VertexTag::GammaIn || t == VertexTag::GammaTwo) &&
            std::abs(phi0[static_cast<std::size_t>(v)] - want) > 1e-12)
            throw Error("run_optimization: phi0 violates its Dirichlet data at vertex " +
                        std::to_string(v));
    }

    auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    GradientFlowSystem ws = make_gradient_flow_system(mesh, op);
    NodalField phi = phi0;

    StateSolution state;
    SensitivityLoad sens;
    NodalField phi_ref;
    double j_ref = 0.0;

    auto refresh = [&](bool allow_warm) {
        StateSolution next = gummel_solve(mesh, phi, pp, tol, allow_warm ? &state : nullptr);
        if (!next.converged) {
            next = gummel_solve(mesh, phi, pp, tol); // cold retry
            if (!next.converged)
                throw SolverError("run_optimization: Gummel solver failed to converge (last "
                                  "residual " + std::to_string(next.residual) + ")");
        }
        state = std::move(next);
        if (op.sensitivity_model == SensitivityModel::Consistent) {
            auto adj = solve_adjoint_discrete(mesh, phi, state, pp);
            sens = assemble_sensitivity_discrete(mesh, phi, state, adj, pp);
        } else {
            auto adj = solve_adjoint(mesh, phi, state, pp);
            sens = assemble_sensitivity(mesh, phi, state, adj, pp);
        }
        phi_ref = phi;
        j_ref = objective(mesh, state.c);
    };

    auto lagged_energies = [&](const NodalField& p) {
        double gl = ginzburg_landau_energy(mesh, p, op.kappa);
        double vol = volume(mesh, p);
        double pen = 0.5 * op.beta * (vol - op.v_target) * (vol - op.v_target);
        double linear = 0.0;
        for (int v = 0; v < n; ++v)
            linear += sens[static_cast<std::size_t>(v)] *
                      (p[static_cast<std::size_t>(v)] - phi_ref[static_cast<std::size_t>(v)]);
        struct {
            double w, w_hat, w_hat_lagged, vol;
        } r{gl + j_ref, gl + j_ref + pen, gl + pen + j_ref + linear, vol};
        return r;
    };

    OptimizationHistory history;
    auto record = [&](int iter, bool refreshed, const NodalField* raw) {
        auto e = lagged_energies(phi);
        double step_energy = raw ? lagged_energies(*raw).w_hat_lagged : e.w_hat_lagged;
        history.push_back({iter, j_ref, e.w, e.w_hat, e.vol, std::abs(e.vol - op.v_target),
                           state.gummel_iterations, elapsed(), e.w_hat_lagged, step_energy,
                           refreshed});
    };

    refresh(false);
    record(0, true, nullptr);
    if (snapshot)
        snapshot(0, phi, state);

    int quiet_steps = 0;
    NodalField raw;
    for (int iter = 0; iter < op.outer_iters; ++iter) {
        bool refreshed = false;
        if (iter > 0 && iter % op.state_update_stride == 0) {
            refresh(true);
            refreshed = true;
        }
        NodalField next;
        try {
            next = gradient_flow_step(mesh, phi, sens, op, ws, &raw);
        } catch (const SolverError& e) {
            throw SolverError(std::string(e.what()) + " at iteration " + std::to_string(iter));
        }
        double step_change = 0.0;
        for (int v = 0; v < n; ++v)
            step_change = std::max(step_change,
                                   std::abs(next[static_cast<std::size_t>(v)] -
                                            phi[static_cast<std::size_t>(v)]));
        phi = std::move(next);
        record(iter + 1, refreshed, &raw);
        if (snapshot)
            snapshot(iter + 1, phi, state);

        if (op.early_stop) {
            quiet_steps = step_change < 1e-9 ? quiet_steps + 1 : 0;
            if (quiet_steps >= 20)
                break;
        }
    }

    // return the state at the final phase field
    StateSolution final_state = gummel_solve(mesh, phi, pp, tol, &state);
    if (!final_state.converged)
        final_state = gummel_solve(mesh, phi, pp, tol);
    return {std::move(phi), std::move(final_state), std::move(history)};
}

} // namespace captopt
