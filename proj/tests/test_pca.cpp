#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "maple/pca.hpp"
#include "test_support.hpp"

using namespace maple;

namespace {

// All 2^d sign rows: exact zero column means and exactly orthogonal columns.
Matrix sign_design(std::size_t d) {
    const std::size_t n = std::size_t{1} << d;
    Matrix u(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            u(i, j) = ((i >> (d - 1 - j)) & 1) ? -1.0 : 1.0;
    return u;
}

}  // namespace

TEST_CASE("data on a line reduces to one component") {
    Matrix data(8, 3);
    std::vector<double> direction = {1.0, 2.0, 2.0};
    for (std::size_t i = 0; i < 8; ++i) {
        double t = static_cast<double>(i) - 3.5;
        for (std::size_t j = 0; j < 3; ++j) data(i, j) = t * direction[j];
    }
    auto pca = fit_pca(data);
    REQUIRE(pca.reduced_dim() == 1);
    REQUIRE(pca.explained_fraction == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("exactly isotropic data keeps every component") {
    // sign design: correlation matrix is exactly the identity
    auto data = sign_design(4);
    auto pca = fit_pca(data, 0.95);
    REQUIRE(pca.reduced_dim() == 4);
    REQUIRE(pca.explained_fraction == Catch::Approx(1.0).margin(1e-12));
    for (double v : pca.eigenvalues) REQUIRE(v == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("constructed spectrum selects the minimal 95% prefix") {
    // X = U L^T where U is the exact sign design, so the sample covariance is
    // exactly L L^T and the standardized spectrum is known in closed form.
    const double L[5][5] = {
        {2.0, 0.0, 0.0, 0.0, 0.0},
        {1.5, 1.0, 0.0, 0.0, 0.0},
        {1.0, 1.0, 0.5, 0.0, 0.0},
        {0.5, -0.5, 0.25, 0.3, 0.0},
        {-0.5, 0.25, 0.25, 0.1, 0.2},
    };
    auto u = sign_design(5);
    Matrix data(u.rows(), 5);
    for (std::size_t i = 0; i < u.rows(); ++i)
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += u(i, c) * L[r][c];
            data(i, r) = s;
        }

    auto pca = fit_pca(data, 0.95);
    // frozen from a high-precision eigendecomposition of the exact
    // correlation matrix D^-1/2 L L^T D^-1/2
    const double expected[5] = {3.161305843980509, 1.3221911503894708,
                                0.48312725179022525, 0.02434991947942451,
                                0.009025834360371049};
    for (std::size_t i = 0; i < 5; ++i)
        REQUIRE(pca.eigenvalues[i] == Catch::Approx(expected[i]).margin(1e-9));
    REQUIRE(pca.reduced_dim() == 3);
    REQUIRE(pca.explained_fraction ==
            Catch::Approx(0.9933248492320409).margin(1e-9));
    // minimality: the prefix of two components falls short of the target
    double two = (expected[0] + expected[1]) / 5.0;
    REQUIRE(two < 0.95);
}

TEST_CASE("transform maps the mean to zero and is affine") {
    Rng rng(61);
    Matrix data(60, 4);
    for (double& v : data.storage()) v = rng.normal() * 2.0 + 1.0;
    auto pca = fit_pca(data, 0.99);
    auto z = pca.transform(pca.mean);
    for (double v : z) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));

    // affine identity: T(a x + (1-a) y) = a T(x) + (1-a) T(y)
    std::vector<double> x(4), y(4);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    double alpha = 0.3;
    std::vector<double> mix(4);
    for (std::size_t j = 0; j < 4; ++j) mix[j] = alpha * x[j] + (1 - alpha) * y[j];
    auto tx = pca.transform(x);
    auto ty = pca.transform(y);
    auto tm = pca.transform(mix);
    for (std::size_t j = 0; j < tm.size(); ++j)
        REQUIRE(tm[j] == Catch::Approx(alpha * tx[j] + (1 - alpha) * ty[j]).margin(1e-12));
}

TEST_CASE("reconstruction error equals the residual eigenvalue mass") {
    Rng rng(62);
    Matrix data(300, 6);
    for (std::size_t i = 0; i < 300; ++i) {
        double t = rng.normal(), u = rng.normal(), w = rng.normal();
        data(i, 0) = 3.0 * t + 0.1 * rng.normal();
        data(i, 1) = -2.0 * t + u + 0.1 * rng.normal();
        data(i, 2) = u + 0.05 * rng.normal();
        data(i, 3) = 0.5 * w + 0.05 * rng.normal();
        data(i, 4) = 0.2 * rng.normal();
        data(i, 5) = t - u + 0.1 * rng.normal();
    }
    auto pca = fit_pca(data, 0.95);
    const std::size_t d = 6;
    double mean_residual = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        std::vector<double> std_x(d);
        for (std::size_t j = 0; j < d; ++j)
            std_x[j] = (data(i, j) - pca.mean[j]) / pca.stddev[j];
        auto z = pca.transform(data.row(i));
        // reconstruction in standardized coordinates
        std::vector<double> rec(d, 0.0);
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t c = 0; c < pca.reduced_dim(); ++c)
                rec[j] += pca.components(j, c) * z[c];
        for (std::size_t j = 0; j < d; ++j) {
            double r = std_x[j] - rec[j];
            mean_residual += r * r;
        }
    }
    mean_residual /= static_cast<double>(data.rows());
    double trace = 0.0, kept = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += std::max(pca.eigenvalues[j], 0.0);
    for (std::size_t c = 0; c < pca.reduced_dim(); ++c)
        kept += std::max(pca.eigenvalues[c], 0.0);
    REQUIRE(mean_residual == Catch::Approx(trace - kept).margin(1e-9));
    REQUIRE(mean_residual <= (1.0 - pca.explained_fraction) * trace + 1e-9);
}

TEST_CASE("zero-variance dimensions are flagged and carry no weight") {
    Rng rng(63);
    Matrix data(50, 3);
    for (std::size_t i = 0; i < 50; ++i) {
        data(i, 0) = rng.normal();
        data(i, 1) = 7.5;  // constant
        data(i, 2) = rng.normal();
    }
    auto pca = fit_pca(data, 0.99);
    REQUIRE(pca.zero_variance[1] == 1);
    REQUIRE(pca.zero_variance[0] == 0);
    REQUIRE(pca.stddev[1] == 1.0);
    std::vector<double> a = {0.5, 7.5, -0.3};
    std::vector<double> b = {0.5, 123.0, -0.3};
    auto za = pca.transform(a);
    auto zb = pca.transform(b);
    for (std::size_t j = 0; j < za.size(); ++j)
        REQUIRE(za[j] == Catch::Approx(zb[j]).margin(1e-9));
}

TEST_CASE("all-constant data is rejected") {
    Matrix data(10, 2);
    for (double& v : data.storage()) v = 3.0;
    REQUIRE_THROWS_AS(fit_pca(data), DataError);
    Matrix single(1, 2);
    REQUIRE_THROWS_AS(fit_pca(single), DataError);
}

TEST_CASE("components are orthonormal") {
    Rng rng(64);
    Matrix data(120, 5);
    for (double& v : data.storage()) v = rng.normal();
    auto pca = fit_pca(data, 0.9);
    for (std::size_t a = 0; a < pca.reduced_dim(); ++a)
        for (std::size_t b = a; b < pca.reduced_dim(); ++b) {
            double g = 0.0;
            for (std::size_t j = 0; j < 5; ++j)
                g += pca.components(j, a) * pca.components(j, b);
            REQUIRE(g == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-9));
        }
}
