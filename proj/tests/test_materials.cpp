#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "captopt/materials.hpp"
#include "support/oracles.hpp"

using namespace captopt;

TEST_CASE("clamp01") {
    CHECK(clamp01(0.3) == 0.3);
    CHECK(clamp01(-0.2) == 0.0);
    CHECK(clamp01(1.7) == 1.0);
}

TEST_CASE("diffusion interpolation") {
    PhysicalParams pp; // d0 = 0.5, dm = 0.01, p = 2
    CHECK(diffusion(1.0, pp) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(diffusion(0.0, pp) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(diffusion(0.5, pp) == doctest::Approx(0.1325).epsilon(1e-15));
    // out-of-range inputs stay within [dm, d0]
    for (double phi : {-2.0, -0.1, 0.2, 0.7, 1.3, 10.0}) {
        double d = diffusion(phi, pp);
        CHECK(d >= pp.dm);
        CHECK(d <= pp.d0);
    }
}

TEST_CASE("dielectric interpolation") {
    PhysicalParams pp; // eps0 = 0.01, epsm = 5
    CHECK(dielectric(1.0, pp) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(dielectric(0.0, pp) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(dielectric(0.5, pp) == doctest::Approx(3.7525).epsilon(1e-15));
    for (double phi : {-2.0, 0.4, 1.3}) {
        double e = dielectric(phi, pp);
        CHECK(e >= pp.eps0);
        CHECK(e <= pp.epsm);
    }
}

TEST_CASE("interpolation derivatives") {
    PhysicalParams pp;
    CHECK(diffusion_derivative(0.5, pp) == doctest::Approx(0.49).epsilon(1e-15));
    CHECK(diffusion_derivative(1.2, pp) == 0.0);
    CHECK(diffusion_derivative(0.0, pp) == 0.0);
    CHECK(diffusion_derivative(1.0, pp) == 0.0);
    CHECK(dielectric_derivative(0.5, pp) == doctest::Approx(2.0 * 0.5 * (0.01 - 5.0)));
}

TEST_CASE("central finite difference matches the derivative") {
    PhysicalParams pp;
    oracle::Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        double phi = rng.uniform(1e-3, 1.0 - 1e-3);
        double h = 1e-5;
        double fd_d = (diffusion(phi + h, pp) - diffusion(phi - h, pp)) / (2 * h);
        double fd_e = (dielectric(phi + h, pp) - dielectric(phi - h, pp)) / (2 * h);
        CHECK(std::abs(diffusion_derivative(phi, pp) - fd_d) < 1e-8);
        CHECK(std::abs(dielectric_derivative(phi, pp) - fd_e) < 1e-6);
    }
}

TEST_CASE("double well") {
    CHECK(double_well(0.0) == 0.0);
    CHECK(double_well(1.0) == 0.0);
    CHECK(double_well_derivative(0.0) == 0.0);
    CHECK(double_well_derivative(1.0) == 0.0);
    CHECK(double_well(0.5) == doctest::Approx(1.0 / 64).epsilon(1e-15));
    CHECK(double_well_derivative(0.5) == 0.0);
    CHECK(double_well_derivative(0.25) == doctest::Approx(0.046875).epsilon(1e-15));
    oracle::Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        double phi = rng.uniform(-1.0, 2.0);
        CHECK(double_well(phi) >= 0.0);
        if (phi != 0.0 && phi != 1.0)
            CHECK((double_well(phi) > 0.0) == (phi != 0.0 && phi != 1.0));
    }
}

TEST_CASE("parameter validation") {
    PhysicalParams pp;
    CHECK_NOTHROW(pp.validate());
    PhysicalParams bad = pp;
    bad.dm = 0.7; // violates dm < d0
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = pp;
    bad.p = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = pp;
    bad.eps0 = 6.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}
