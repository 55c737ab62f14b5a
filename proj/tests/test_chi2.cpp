#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "maple/chi2.hpp"

using maple::chi2_cdf;
using maple::chi2_inv;

TEST_CASE("chi2_cdf matches the dof=2 closed form to 1e-12 on [0, 50]") {
    for (int i = 0; i <= 1000; ++i) {
        double x = 50.0 * i / 1000.0;
        double expected = 1.0 - std::exp(-0.5 * x);
        REQUIRE(std::abs(chi2_cdf(x, 2) - expected) < 1e-12);
    }
}

TEST_CASE("chi2_cdf endpoints and monotonicity") {
    REQUIRE(chi2_cdf(0.0, 1) == 0.0);
    REQUIRE(chi2_cdf(0.0, 7) == 0.0);
    REQUIRE(chi2_cdf(1e6, 3) == Catch::Approx(1.0).margin(1e-14));
    for (int dof : {1, 2, 5, 10, 30}) {
        double prev = -1.0;
        for (int i = 0; i <= 400; ++i) {
            double x = 80.0 * i / 400.0;
            double v = chi2_cdf(x, dof);
            REQUIRE(v >= prev);
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
            prev = v;
        }
    }
}

TEST_CASE("chi2_cdf hits the dof=5 median") {
    // median of chi-squared with 5 dof is 4.35146
    REQUIRE(std::abs(chi2_cdf(4.35146, 5) - 0.5) < 1e-6);
}

TEST_CASE("chi2_cdf value at x=2, dof=2") {
    REQUIRE(chi2_cdf(2.0, 2) == Catch::Approx(0.6321205588285577).epsilon(1e-12));
}

TEST_CASE("chi2_inv inverts chi2_cdf") {
    for (int dof : {1, 2, 4, 9}) {
        for (double p : {0.0, 0.01, 0.25, 0.5, 0.9, 0.999}) {
            double x = chi2_inv(p, dof);
            REQUIRE(std::abs(chi2_cdf(x, dof) - p) < 1e-9);
        }
    }
    REQUIRE(chi2_inv(0.0, 3) == 0.0);
    REQUIRE_THROWS_AS(chi2_inv(1.0, 3), std::invalid_argument);
    REQUIRE_THROWS_AS(chi2_cdf(-0.1, 3), std::invalid_argument);
}
