#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "captopt/error.hpp"

namespace captopt {

/// PNP coefficients and boundary data. Defaults are the 2D baseline used by
/// the shipped configurations. phi = 1 marks electrolyte, phi = 0 electrode.
struct PhysicalParams {
    double eps0 = 0.01;     // electrolyte dielectric
    double epsm = 5.0;      // electrode dielectric
    double d0 = 0.5;        // electrolyte diffusivity
    double dm = 0.01;       // electrode diffusivity
    double alpha0 = 1.0;    // electrode-ion repulsion strength
    int p = 2;              // interpolation power
    double g_gamma2 = -0.5; // applied potential on GammaTwo
    double g_gammain = 0.0; // potential on GammaIn
    double c_inf = 0.5;     // reservoir concentration, both species
    double rho_gamma2 = 0.0; // Slotboom boundary value on GammaTwo

    static constexpr std::array<int, 2> valence{+1, -1};

    void validate() const {
        if (!(dm > 0.0 && dm < d0))
            throw Error("PhysicalParams: need 0 < dm < d0");
        if (!(eps0 > 0.0 && eps0 < epsm))
            throw Error("PhysicalParams: need 0 < eps0 < epsm");
        if (p < 1)
            throw Error("PhysicalParams: need p >= 1");
        if (alpha0 < 0.0)
            throw Error("PhysicalParams: need alpha0 >= 0");
        if (c_inf < 0.0)
            throw Error("PhysicalParams: need c_inf >= 0");
        if (rho_gamma2 < 0.0)
            throw Error("PhysicalParams: need rho_gamma2 >= 0");
    }
};

inline double clamp01(double v) { return std::min(std::max(v, 0.0), 1.0); }

inline double diffusion(double phi, const PhysicalParams& pp) {
    double t = clamp01(std::pow(phi, pp.p));
    return (1.0 - t) * pp.dm + t * pp.d0; // convex form: endpoints are exact
}

inline double dielectric(double phi, const PhysicalParams& pp) {
    double t = clamp01(std::pow(phi, pp.p));
    return (1.0 - t) * pp.epsm + t * pp.eps0;
}

// Derivatives of the interpolations. Zero wherever the clamp is active,
// including exactly at phi = 0 and phi = 1: after projection large regions sit
// exactly on the bounds and must not leak sensitivity.
inline double diffusion_derivative(double phi, const PhysicalParams& pp) {
    if (phi <= 0.0 || phi >= 1.0)
        return 0.0;
    return pp.p * std::pow(phi, pp.p - 1) * (pp.d0 - pp.dm);
}

inline double dielectric_derivative(double phi, const PhysicalParams& pp) {
    if (phi <= 0.0 || phi >= 1.0)
        return 0.0;
    return pp.p * std::pow(phi, pp.p - 1) * (pp.eps0 - pp.epsm);
}

/// Double-well potential w(phi) = phi^2 (phi-1)^2 / 4 and its derivative.
inline double double_well(double phi) {
    double q = phi * (phi - 1.0);
    return 0.25 * q * q;
}

inline double double_well_derivative(double phi) {
    return 0.5 * phi * (phi - 1.0) * (2.0 * phi - 1.0);
}

} // namespace captopt
