// Command-line driver: optimization runs, mesh inspection, gradient checks
// and the equilibrium smoke test, all configured by one INI-style file.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "captopt/adjoint.hpp"
#include "captopt/config.hpp"
#include "captopt/io.hpp"
#include "captopt/optimizer.hpp"
#include "captopt/pnp.hpp"

using namespace captopt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

void print_usage(std::ostream& os) {
    os << "usage: captopt <subcommand> <config-file>\n"
          "subcommands:\n"
          "  run               run the topology optimization loop\n"
          "  mesh-only         generate the mesh, print diagnostics, export VTK\n"
          "  check-gradient    compare adjoint and finite-difference derivatives\n"
          "  equilibrium-test  verify the zero-bias equilibrium is reproduced exactly\n";
}

struct SplitMix64 {
    std::uint64_t state;
    explicit SplitMix64(std::uint64_t seed) : state(seed) {}
    double uniform() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z = z ^ (z >> 31);
        return static_cast<double>(z >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

// Smooth direction vanishing on GammaIn and GammaTwo, max-normalized.
NodalField smooth_direction(const TriangleMesh& mesh, const GeometryConfig& g,
                            SplitMix64& rng) {
    NodalField theta(static_cast<std::size_t>(mesh.num_vertices()), 0.0);
    double a[3][3];
    for (auto& row : a)
        for (auto& v : row)
            v = rng.uniform(-1.0, 1.0);
    double maxabs = 0.0;
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        Vec2 p = mesh.vertices[static_cast<std::size_t>(v)];
        double s = 0.0;
        if (g.kind == GeometryConfig::Kind::Rectangle) {
            for (int k = 1; k <= 3; ++k)
                for (int l = 0; l < 3; ++l)
                    s += a[k - 1][l] * std::sin(k * M_PI * p.x / g.width) *
                         std::cos(l * M_PI * p.y / g.height);
        } else {
            double r = std::hypot(p.x, p.y);
            double th = std::atan2(p.y, p.x);
            double rad = (r - g.r_inner) / (g.r_outer - g.r_inner);
            for (int k = 1; k <= 3; ++k)
                for (int l = 0; l < 3; ++l)
                    s += a[k - 1][l] * std::sin(k * M_PI * rad) * std::cos(l * th);
        }
        theta[static_cast<std::size_t>(v)] = s;
        maxabs = std::max(maxabs, std::abs(s));
    }
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        if (mesh.is_dirichlet_vertex(v))
            theta[static_cast<std::size_t>(v)] = 0.0;
        else
            theta[static_cast<std::size_t>(v)] /= maxabs;
    }
    return theta;
}

int cmd_mesh_only(const RunConfig& cfg) {
    TriangleMesh mesh = build_mesh(cfg.geometry);
    MeshDiagnostics d = validate_mesh(mesh);
    std::printf("vertices: %d\n", mesh.num_vertices());
    std::printf("triangles: %d\n", mesh.num_triangles());
    std::printf("boundary edges: GammaIn %d, GammaOne %d, GammaTwo %d\n",
                d.tag_edge_counts[BoundaryTag::GammaIn], d.tag_edge_counts[BoundaryTag::GammaOne],
                d.tag_edge_counts[BoundaryTag::GammaTwo]);
    std::printf("total area: %.12g\n", d.total_area);
    std::printf("min element area: %.12g\n", d.min_area);
    std::printf("h (max diameter): %.12g\n", d.h);
    std::printf("max angle: %.6f deg\n", d.max_angle * 180.0 / M_PI);
    std::printf("non-obtuse: %s\n", d.is_nonobtuse ? "yes" : "no");
    if (!d.inverted_elements.empty())
        std::fprintf(stderr, "warning: %zu inverted elements\n", d.inverted_elements.size());
    if (d.untagged_boundary_edges > 0)
        std::fprintf(stderr, "warning: %d untagged boundary edges\n", d.untagged_boundary_edges);

    std::filesystem::create_directories(cfg.output_dir);
    NodalField tags(static_cast<std::size_t>(mesh.num_vertices()));
    for (int v = 0; v < mesh.num_vertices(); ++v)
        tags[static_cast<std::size_t>(v)] =
            static_cast<double>(static_cast<int>(mesh.vertex_tags[static_cast<std::size_t>(v)]));
    std::string path = cfg.output_dir + "/mesh.vtk";
    write_vtk_snapshot(path, mesh, {{"boundary_tag", &tags}});
    std::printf("wrote %s\n", path.c_str());
    return kExitOk;
}

int cmd_run(const RunConfig& cfg) {
    TriangleMesh mesh = build_mesh(cfg.geometry);
    MeshDiagnostics d = validate_mesh(mesh);
    if (!d.is_nonobtuse)
        std::fprintf(stderr,
                     "note: mesh has obtuse elements (max angle %.3f deg); the discrete "
                     "maximum principle is not guaranteed\n",
                     d.max_angle * 180.0 / M_PI);

    OptimParams op = cfg.optim;
    op.v_target = resolve_v_target(cfg, mesh);
    NodalField phi0 = initial_phase_field(mesh, cfg.initial_m);
    std::filesystem::create_directories(cfg.output_dir);

    std::set<int> written;
    auto snapshot = [&](int iter, const NodalField& phi, const StateSolution& st) {
        bool due = iter % cfg.snapshot_stride == 0 || iter == op.outer_iters;
        if (!due || written.count(iter))
            return;
        written.insert(iter);
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "%06d.vtk", iter);
        write_vtk_snapshot(cfg.output_dir + "/phi_" + suffix, mesh, {{"phi", &phi}});
        write_vtk_snapshot(cfg.output_dir + "/state_" + suffix, mesh,
                           {{"psi", &st.psi}, {"c1", &st.c[0]}, {"c2", &st.c[1]}});
    };

    std::printf("running %d outer iterations (stride %d) on %d vertices, V0 = %.6g\n",
                op.outer_iters, op.state_update_stride, mesh.num_vertices(), op.v_target);
    OptimizationResult res = run_optimization(mesh, cfg.physical, op, cfg.tolerances, phi0,
                                              snapshot);
    write_history_csv(cfg.output_dir + "/history.csv", res.history);

    const HistoryRecord& last = res.history.back();
    double j_final = objective(mesh, res.state.c);
    std::printf("final objective: %.8g (initial %.8g)\n", j_final, res.history.front().objective);
    std::printf("final volume: %.8g (error %.3g)\n", last.volume, last.volume_error);
    auto rep = linf_bound_report(mesh, res.state, cfg.physical);
    if (!rep.ok)
        std::fprintf(stderr,
                     "warning: L-inf bounds violated (rho in [%.3g, %.3g] vs [0, %.3g], psi in "
                     "[%.3g, %.3g] vs [%.3g, %.3g])\n",
                     rep.rho_min, rep.rho_max, rep.rho_bound, rep.psi_min, rep.psi_max,
                     rep.psi_lower, rep.psi_upper);
    std::printf("wrote %s/history.csv and %zu snapshots\n", cfg.output_dir.c_str(),
                written.size());
    return kExitOk;
}

int cmd_check_gradient(const RunConfig& cfg) {
    TriangleMesh mesh = build_mesh(cfg.geometry);
    PhysicalParams pp = cfg.physical;
    SolverTolerances tol = cfg.tolerances;
    tol.gummel_tol = std::min(tol.gummel_tol, 1e-13);
    tol.newton_tol = std::min(tol.newton_tol, 1e-13);

    NodalField phi = initial_phase_field(mesh, cfg.initial_m);
    StateSolution st = gummel_solve(mesh, phi, pp, tol);
    if (!st.converged) {
        std::fprintf(stderr, "check-gradient: state solve did not converge\n");
        return kExitSolver;
    }
    // the check needs the gradient of the discrete objective itself, so it
    // always uses the stabilized-consistent adjoint realization
    auto adj = solve_adjoint_discrete(mesh, phi, st, pp);
    SensitivityLoad load = assemble_sensitivity_discrete(mesh, phi, st, adj, pp);

    SplitMix64 rng(cfg.seed == 0 ? 0x5eedULL : cfg.seed);
    const double threshold = 1e-4;
    bool all_ok = true;
    for (int dir = 0; dir < 5; ++dir) {
        NodalField theta = smooth_direction(mesh, cfg.geometry, rng);
        double adj_dd = directional_derivative(load, theta);
        double best = 1e300, best_fd = 0.0, best_step = 0.0;
        for (double step : {1e-4, 1e-5, 1e-6}) {
            NodalField phip = phi, phim = phi;
            for (std::size_t i = 0; i < phi.size(); ++i) {
                phip[i] += step * theta[i];
                phim[i] -= step * theta[i];
            }
            auto stp = gummel_solve(mesh, phip, pp, tol, &st);
            auto stm = gummel_solve(mesh, phim, pp, tol, &st);
            if (!stp.converged || !stm.converged) {
                std::fprintf(stderr, "check-gradient: perturbed solve did not converge\n");
                return kExitSolver;
            }
            double fd = (objective(mesh, stp.c) - objective(mesh, stm.c)) / (2.0 * step);
            double rel = std::abs(adj_dd - fd) / std::max(std::abs(fd), 1e-30);
            if (rel < best) {
                best = rel;
                best_fd = fd;
                best_step = step;
            }
        }
        std::printf("direction %d: adjoint %.10e, fd %.10e (step %.0e), relative error %.3e\n",
                    dir, adj_dd, best_fd, best_step, best);
        all_ok = all_ok && best <= threshold;
    }
    std::printf("gradient check %s (threshold %.0e)\n", all_ok ? "PASSED" : "FAILED", threshold);
    return all_ok ? kExitOk : kExitSolver;
}

int cmd_equilibrium_test(const RunConfig& cfg) {
    TriangleMesh mesh = build_mesh(cfg.geometry);
    PhysicalParams pp = cfg.physical;
    pp.g_gammain = 0.0;
    pp.g_gamma2 = 0.0;
    pp.rho_gamma2 = pp.c_inf * std::exp(-pp.alpha0); // uniform Slotboom data

    NodalField phi(static_cast<std::size_t>(mesh.num_vertices()), 1.0);
    StateSolution st = gummel_solve(mesh, phi, pp, cfg.tolerances);

    double psi_max = 0.0, c_err = 0.0;
    for (double p : st.psi)
        psi_max = std::max(psi_max, std::abs(p));
    for (int i = 0; i < 2; ++i)
        for (double c : st.c[static_cast<std::size_t>(i)])
            c_err = std::max(c_err, std::abs(c - pp.c_inf));

    bool ok = st.converged && st.gummel_iterations <= 2 && psi_max <= 1e-10 && c_err <= 1e-10;
    std::printf("equilibrium test: sweeps %d, max |psi| = %.3e, max |c - c_inf| = %.3e -> %s\n",
                st.gummel_iterations, psi_max, c_err, ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitSolver;
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        print_usage(std::cerr);
        return kExitUsage;
    }
    std::string sub = argv[1];
    if (sub != "run" && sub != "mesh-only" && sub != "check-gradient" &&
        sub != "equilibrium-test") {
        std::fprintf(stderr, "unknown subcommand '%s'\n", sub.c_str());
        print_usage(std::cerr);
        return kExitUsage;
    }

    RunConfig cfg;
    try {
        cfg = load_config_file(argv[2]);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    }

    try {
        if (sub == "run")
            return cmd_run(cfg);
        if (sub == "mesh-only")
            return cmd_mesh_only(cfg);
        if (sub == "check-gradient")
            return cmd_check_gradient(cfg);
        return cmd_equilibrium_test(cfg);
    } catch (const SolverError& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return kExitSolver;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return kExitSolver;
    }
}
