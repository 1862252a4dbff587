#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "captopt/error.hpp"
#include "captopt/materials.hpp"
#include "captopt/mesh.hpp"
#include "captopt/optimizer.hpp"
#include "captopt/pnp.hpp"

namespace captopt {

struct GeometryConfig {
    enum class Kind { Rectangle, Annulus };
    Kind kind = Kind::Rectangle;
    // rectangle
    int nx = 16, ny = 32;
    double width = 1.0, height = 2.0;
    bool swap_inlet = false;
    // annulus
    int nr = 12, ntheta = 96;
    double r_inner = 0.2, r_outer = 1.0;
};

/// Fully validated run description. Defaults reproduce the rectangular
/// baseline at desk scale, so shipped configuration files stay nearly empty.
struct RunConfig {
    GeometryConfig geometry;
    PhysicalParams physical;
    OptimParams optim;
    SolverTolerances tolerances;
    int initial_m = 4;
    std::string output_dir = "out";
    int snapshot_stride = 200;
    unsigned long seed = 0;
    // if >= 0, the volume target becomes fraction * discrete mesh area
    double v_target_fraction = -1.0;
    bool v_target_explicit = false;
};

inline TriangleMesh build_mesh(const GeometryConfig& g) {
    if (g.kind == GeometryConfig::Kind::Rectangle)
        return generate_rectangle_mesh(g.nx, g.ny, g.width, g.height, g.swap_inlet);
    return generate_annulus_mesh(g.nr, g.ntheta, g.r_inner, g.r_outer);
}

/// Volume target against the discrete mesh area when a fraction is configured.
inline double resolve_v_target(const RunConfig& cfg, const TriangleMesh& mesh) {
    if (cfg.v_target_fraction < 0.0)
        return cfg.optim.v_target;
    double area = 0.0;
    for (int k = 0; k < mesh.num_triangles(); ++k)
        area += mesh.signed_area(k);
    return cfg.v_target_fraction * area;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, int line) {
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError(line, "expected a number, got '" + v + "'");
    return x;
}

inline long parse_int(const std::string& v, int line) {
    char* end = nullptr;
    long x = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError(line, "expected an integer, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& v, int line) {
    if (v == "true")
        return true;
    if (v == "false")
        return false;
    throw ConfigError(line, "expected true or false, got '" + v + "'");
}

inline void require(bool ok, int line, const std::string& msg) {
    if (!ok)
        throw ConfigError(line, msg);
}

} // namespace detail

/// Parses line-oriented `key = value` text with `[section]` headers and `#`
/// comments. Unknown sections or keys are errors; invariant violations are
/// reported with the offending line.
inline RunConfig parse_config(const std::string& text) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    using detail::require;

    RunConfig cfg;
    bool fraction_set = false;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        std::size_t hash = s.find('#');
        if (hash != std::string::npos)
            s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty())
            continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError(line, "malformed section header '" + s + "'");
            section = s.substr(1, s.size() - 2);
            if (section != "geometry" && section != "physical" && section != "optim" &&
                section != "tolerances" && section != "run")
                throw ConfigError(line, "unknown section '" + section + "'");
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(line, "expected 'key = value', got '" + s + "'");
        std::string key = detail::trim(s.substr(0, eq));
        std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(line, "expected 'key = value', got '" + s + "'");

        if (section == "geometry") {
            auto& g = cfg.geometry;
            if (key == "type") {
                if (value == "rectangle")
                    g.kind = GeometryConfig::Kind::Rectangle;
                else if (value == "annulus")
                    g.kind = GeometryConfig::Kind::Annulus;
                else
                    throw ConfigError(line, "type must be rectangle or annulus");
            } else if (key == "nx") {
                g.nx = static_cast<int>(parse_int(value, line));
                require(g.nx >= 1, line, "nx must be >= 1");
            } else if (key == "ny") {
                g.ny = static_cast<int>(parse_int(value, line));
                require(g.ny >= 1, line, "ny must be >= 1");
            } else if (key == "width") {
                g.width = parse_double(value, line);
                require(g.width > 0.0, line, "width must be positive");
            } else if (key == "height") {
                g.height = parse_double(value, line);
                require(g.height > 0.0, line, "height must be positive");
            } else if (key == "swap_inlet") {
                g.swap_inlet = parse_bool(value, line);
            } else if (key == "nr") {
                g.nr = static_cast<int>(parse_int(value, line));
                require(g.nr >= 1, line, "nr must be >= 1");
            } else if (key == "ntheta") {
                g.ntheta = static_cast<int>(parse_int(value, line));
                require(g.ntheta >= 3, line, "ntheta must be >= 3");
            } else if (key == "r_inner") {
                g.r_inner = parse_double(value, line);
                require(g.r_inner > 0.0, line, "r_inner must be positive");
            } else if (key == "r_outer") {
                g.r_outer = parse_double(value, line);
                require(g.r_outer > 0.0, line, "r_outer must be positive");
            } else {
                throw ConfigError(line, "unknown key '" + key + "' in [geometry]");
            }
        } else if (section == "physical") {
            auto& p = cfg.physical;
            if (key == "eps0") {
                p.eps0 = parse_double(value, line);
                require(p.eps0 > 0.0, line, "eps0 must be positive");
            } else if (key == "epsm") {
                p.epsm = parse_double(value, line);
                require(p.epsm > 0.0, line, "epsm must be positive");
            } else if (key == "d0") {
                p.d0 = parse_double(value, line);
                require(p.d0 > 0.0, line, "d0 must be positive");
            } else if (key == "dm") {
                p.dm = parse_double(value, line);
                require(p.dm > 0.0, line, "dm must be positive");
            } else if (key == "alpha0") {
                p.alpha0 = parse_double(value, line);
                require(p.alpha0 >= 0.0, line, "alpha0 must be >= 0");
            } else if (key == "p") {
                p.p = static_cast<int>(parse_int(value, line));
                require(p.p >= 1, line, "p must be >= 1");
            } else if (key == "g_gamma2") {
                p.g_gamma2 = parse_double(value, line);
            } else if (key == "g_gammain") {
                p.g_gammain = parse_double(value, line);
            } else if (key == "c_inf") {
                p.c_inf = parse_double(value, line);
                require(p.c_inf >= 0.0, line, "c_inf must be >= 0");
            } else if (key == "rho_gamma2") {
                p.rho_gamma2 = parse_double(value, line);
                require(p.rho_gamma2 >= 0.0, line, "rho_gamma2 must be >= 0");
            } else {
                throw ConfigError(line, "unknown key '" + key + "' in [physical]");
            }
        } else if (section == "optim") {
            auto& o = cfg.optim;
            if (key == "kappa") {
                o.kappa = parse_double(value, line);
                require(o.kappa > 0.0, line, "kappa must be > 0");
            } else if (key == "beta") {
                o.beta = parse_double(value, line);
                require(o.beta > 0.0, line, "beta must be > 0");
            } else if (key == "nu") {
                o.nu = parse_double(value, line);
                require(o.nu > 0.0, line, "nu must be > 0");
            } else if (key == "lambda1") {
                o.lambda1 = parse_double(value, line);
                require(o.lambda1 > 0.0, line, "lambda1 must be > 0");
            } else if (key == "lambda2") {
                o.lambda2 = parse_double(value, line);
                require(o.lambda2 > 0.0, line, "lambda2 must be > 0");
            } else if (key == "v_target") {
                o.v_target = parse_double(value, line);
                require(o.v_target > 0.0, line, "v_target must be > 0");
                cfg.v_target_explicit = true;
                require(!fraction_set, line, "set either v_target or v_target_fraction");
            } else if (key == "v_target_fraction") {
                cfg.v_target_fraction = parse_double(value, line);
                require(cfg.v_target_fraction > 0.0 && cfg.v_target_fraction < 1.0, line,
                        "v_target_fraction must lie in (0,1)");
                fraction_set = true;
                require(!cfg.v_target_explicit, line,
                        "set either v_target or v_target_fraction");
            } else if (key == "outer_iters") {
                o.outer_iters = static_cast<int>(parse_int(value, line));
                require(o.outer_iters >= 0, line, "outer_iters must be >= 0");
            } else if (key == "state_update_stride") {
                o.state_update_stride = static_cast<int>(parse_int(value, line));
                require(o.state_update_stride >= 1, line, "state_update_stride must be >= 1");
            } else if (key == "projection") {
                o.projection_enabled = parse_bool(value, line);
            } else if (key == "sensitivity_sign") {
                if (value == "descent")
                    o.sensitivity_sign = SensitivitySign::Descent;
                else if (value == "printed")
                    o.sensitivity_sign = SensitivitySign::Printed;
                else
                    throw ConfigError(line, "sensitivity_sign must be descent or printed");
            } else if (key == "sensitivity_model") {
                if (value == "consistent")
                    o.sensitivity_model = SensitivityModel::Consistent;
                else if (value == "galerkin")
                    o.sensitivity_model = SensitivityModel::Galerkin;
                else
                    throw ConfigError(line, "sensitivity_model must be consistent or galerkin");
            } else if (key == "early_stop") {
                o.early_stop = parse_bool(value, line);
            } else {
                throw ConfigError(line, "unknown key '" + key + "' in [optim]");
            }
        } else if (section == "tolerances") {
            auto& t = cfg.tolerances;
            if (key == "gummel_tol") {
                t.gummel_tol = parse_double(value, line);
                require(t.gummel_tol > 0.0, line, "gummel_tol must be > 0");
            } else if (key == "gummel_max_iter") {
                t.gummel_max_iter = static_cast<int>(parse_int(value, line));
                require(t.gummel_max_iter >= 1, line, "gummel_max_iter must be >= 1");
            } else if (key == "newton_tol") {
                t.newton_tol = parse_double(value, line);
                require(t.newton_tol > 0.0, line, "newton_tol must be > 0");
            } else if (key == "newton_max_iter") {
                t.newton_max_iter = static_cast<int>(parse_int(value, line));
                require(t.newton_max_iter >= 1, line, "newton_max_iter must be >= 1");
            } else if (key == "newton_damping") {
                t.newton_damping = parse_double(value, line);
                require(t.newton_damping > 0.0 && t.newton_damping <= 1.0, line,
                        "newton_damping must lie in (0,1]");
            } else {
                throw ConfigError(line, "unknown key '" + key + "' in [tolerances]");
            }
        } else if (section == "run") {
            if (key == "initial_m") {
                cfg.initial_m = static_cast<int>(parse_int(value, line));
                require(cfg.initial_m >= 1, line, "initial_m must be >= 1");
            } else if (key == "output_dir") {
                cfg.output_dir = value;
            } else if (key == "snapshot_stride") {
                cfg.snapshot_stride = static_cast<int>(parse_int(value, line));
                require(cfg.snapshot_stride >= 1, line, "snapshot_stride must be >= 1");
            } else if (key == "seed") {
                cfg.seed = static_cast<unsigned long>(parse_int(value, line));
            } else {
                throw ConfigError(line, "unknown key '" + key + "' in [run]");
            }
        } else {
            throw ConfigError(line, "key '" + key + "' appears before any [section] header");
        }
    }

    // cross-field invariants
    try {
        cfg.physical.validate();
        cfg.optim.validate();
        cfg.tolerances.validate();
    } catch (const Error& e) {
        throw ConfigError(0, e.what());
    }
    if (cfg.geometry.kind == GeometryConfig::Kind::Annulus &&
        !(cfg.geometry.r_inner < cfg.geometry.r_outer))
        throw ConfigError(0, "annulus radii must satisfy r_inner < r_outer");
    return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "[geometry]\n";
    if (cfg.geometry.kind == GeometryConfig::Kind::Rectangle) {
        out << "type = rectangle\n";
        out << "nx = " << cfg.geometry.nx << "\nny = " << cfg.geometry.ny << "\n";
        out << "width = " << num(cfg.geometry.width) << "\nheight = " << num(cfg.geometry.height)
            << "\n";
        out << "swap_inlet = " << (cfg.geometry.swap_inlet ? "true" : "false") << "\n";
    } else {
        out << "type = annulus\n";
        out << "nr = " << cfg.geometry.nr << "\nntheta = " << cfg.geometry.ntheta << "\n";
        out << "r_inner = " << num(cfg.geometry.r_inner)
            << "\nr_outer = " << num(cfg.geometry.r_outer) << "\n";
    }
    out << "\n[physical]\n";
    out << "eps0 = " << num(cfg.physical.eps0) << "\nepsm = " << num(cfg.physical.epsm) << "\n";
    out << "d0 = " << num(cfg.physical.d0) << "\ndm = " << num(cfg.physical.dm) << "\n";
    out << "alpha0 = " << num(cfg.physical.alpha0) << "\np = " << cfg.physical.p << "\n";
    out << "g_gamma2 = " << num(cfg.physical.g_gamma2)
        << "\ng_gammain = " << num(cfg.physical.g_gammain) << "\n";
    out << "c_inf = " << num(cfg.physical.c_inf)
        << "\nrho_gamma2 = " << num(cfg.physical.rho_gamma2) << "\n";
    out << "\n[optim]\n";
    out << "kappa = " << num(cfg.optim.kappa) << "\nbeta = " << num(cfg.optim.beta) << "\n";
    out << "nu = " << num(cfg.optim.nu) << "\n";
    out << "lambda1 = " << num(cfg.optim.lambda1) << "\nlambda2 = " << num(cfg.optim.lambda2)
        << "\n";
    if (cfg.v_target_fraction >= 0.0)
        out << "v_target_fraction = " << num(cfg.v_target_fraction) << "\n";
    else
        out << "v_target = " << num(cfg.optim.v_target) << "\n";
    out << "outer_iters = " << cfg.optim.outer_iters << "\n";
    out << "state_update_stride = " << cfg.optim.state_update_stride << "\n";
    out << "projection = " << (cfg.optim.projection_enabled ? "true" : "false") << "\n";
    out << "sensitivity_sign = "
        << (cfg.optim.sensitivity_sign == SensitivitySign::Descent ? "descent" : "printed")
        << "\n";
    out << "sensitivity_model = "
        << (cfg.optim.sensitivity_model == SensitivityModel::Consistent ? "consistent"
                                                                        : "galerkin")
        << "\n";
    out << "early_stop = " << (cfg.optim.early_stop ? "true" : "false") << "\n";
    out << "\n[tolerances]\n";
    out << "gummel_tol = " << num(cfg.tolerances.gummel_tol) << "\n";
    out << "gummel_max_iter = " << cfg.tolerances.gummel_max_iter << "\n";
    out << "newton_tol = " << num(cfg.tolerances.newton_tol) << "\n";
    out << "newton_max_iter = " << cfg.tolerances.newton_max_iter << "\n";
    out << "newton_damping = " << num(cfg.tolerances.newton_damping) << "\n";
    out << "\n[run]\n";
    out << "initial_m = " << cfg.initial_m << "\n";
    out << "output_dir = " << cfg.output_dir << "\n";
    out << "snapshot_stride = " << cfg.snapshot_stride << "\n";
    out << "seed = " << cfg.seed << "\n";
    return out.str();
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError(0, "cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

} // namespace captopt
