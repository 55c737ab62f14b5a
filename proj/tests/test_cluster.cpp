#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "maple/cluster.hpp"
#include "test_support.hpp"

using namespace maple;
using test_support::adjusted_rand_index;
using test_support::gaussian_blob;
using test_support::stack_rows;

namespace {

// three blobs separated by well over 20 sigma
Matrix three_blobs(std::uint64_t seed, std::size_t per_blob,
                   std::vector<std::size_t>* truth = nullptr) {
    Rng rng(seed);
    std::vector<double> m1 = {0.0, 0.0};
    std::vector<double> m2 = {30.0, 0.0};
    std::vector<double> m3 = {0.0, 30.0};
    auto pts = stack_rows({gaussian_blob(per_blob, m1, 1.0, rng),
                           gaussian_blob(per_blob, m2, 1.0, rng),
                           gaussian_blob(per_blob, m3, 1.0, rng)});
    if (truth) {
        truth->clear();
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t i = 0; i < per_blob; ++i) truth->push_back(b);
    }
    return pts;
}

}  // namespace

TEST_CASE("kmeans k=1 closed form") {
    Rng rng(41);
    auto pts = gaussian_blob(200, std::vector<double>{1.0, -2.0, 0.5}, 2.0, rng);
    auto model = kmeans(pts, 1, 5);
    std::vector<double> mean(3, 0.0);
    for (std::size_t i = 0; i < pts.rows(); ++i)
        for (std::size_t j = 0; j < 3; ++j) mean[j] += pts(i, j);
    for (auto& v : mean) v /= 200.0;
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(model.centroids(0, j) == Catch::Approx(mean[j]).margin(1e-12));
    double expected_inertia = 0.0;
    for (std::size_t i = 0; i < pts.rows(); ++i)
        expected_inertia += squared_distance(pts.row(i), mean);
    REQUIRE(model.inertia == Catch::Approx(expected_inertia).epsilon(1e-12));
}

TEST_CASE("kmeans two points two clusters") {
    Matrix pts(2, 2);
    pts(0, 0) = 1.0; pts(1, 0) = -1.0;
    auto model = kmeans(pts, 2, 3);
    REQUIRE(model.k() == 2);
    REQUIRE(model.inertia == 0.0);
    REQUIRE(model.assignments[0] != model.assignments[1]);
}

TEST_CASE("kmeans recovers separated blobs") {
    std::vector<std::size_t> truth;
    auto pts = three_blobs(7, 80, &truth);
    auto model = kmeans(pts, 3, 19);
    REQUIRE(adjusted_rand_index(model.assignments, truth) == 1.0);
}

TEST_CASE("kmeans inertia is non-increasing over Lloyd iterations") {
    Rng rng(55);
    auto pts = stack_rows({gaussian_blob(150, std::vector<double>{0.0, 0.0}, 2.0, rng),
                           gaussian_blob(150, std::vector<double>{5.0, 3.0}, 2.0, rng)});
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t iters = 1; iters <= 10; ++iters) {
        auto model = kmeans(pts, 4, 99, iters);
        REQUIRE(model.inertia <= prev + 1e-9);
        prev = model.inertia;
    }
}

TEST_CASE("kmeans rejects more clusters than points") {
    Matrix pts(2, 2);
    REQUIRE_THROWS_AS(kmeans(pts, 3, 1), DataError);
}

TEST_CASE("kmeans centroids equal member means") {
    Rng rng(66);
    auto pts = stack_rows({gaussian_blob(90, std::vector<double>{0.0, 0.0, 0.0}, 1.0, rng),
                           gaussian_blob(70, std::vector<double>{8.0, 8.0, 0.0}, 1.0, rng)});
    auto model = kmeans(pts, 3, 7);
    for (std::size_t c = 0; c < model.k(); ++c) {
        std::vector<double> mean(3, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < pts.rows(); ++i) {
            if (model.assignments[i] != c) continue;
            for (std::size_t j = 0; j < 3; ++j) mean[j] += pts(i, j);
            ++count;
        }
        REQUIRE(count > 0);  // every cluster nonempty
        for (std::size_t j = 0; j < 3; ++j) {
            mean[j] /= static_cast<double>(count);
            double denom = std::max(1.0, std::abs(mean[j]));
            REQUIRE(std::abs(model.centroids(c, j) - mean[j]) / denom < 1e-9);
        }
    }
}

TEST_CASE("bic prefers one cluster for a single Gaussian") {
    std::size_t wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed);
        auto pts = gaussian_blob(500, std::vector<double>{0.0, 0.0}, 1.0, rng);
        auto one = kmeans(pts, 1, seed);
        auto two = kmeans(pts, 2, seed);
        if (bic(pts, one) > bic(pts, two)) ++wins;
    }
    REQUIRE(wins >= 19);
}

TEST_CASE("bic prefers two clusters for two distant blobs") {
    Rng rng(77);
    auto pts = stack_rows({gaussian_blob(250, std::vector<double>{0.0, 0.0}, 1.0, rng),
                           gaussian_blob(250, std::vector<double>{20.0, 0.0}, 1.0, rng)});
    auto one = kmeans(pts, 1, 3);
    auto two = kmeans(pts, 2, 3);
    REQUIRE(bic(pts, two) > bic(pts, one));
}

TEST_CASE("bic matches the analytic formula, including duplicated data") {
    Rng rng(88);
    auto pts = stack_rows({gaussian_blob(120, std::vector<double>{0.0, 0.0}, 1.0, rng),
                           gaussian_blob(120, std::vector<double>{12.0, 0.0}, 1.0, rng)});
    auto model = kmeans(pts, 2, 5);
    std::vector<std::size_t> counts(model.k(), 0);
    for (auto a : model.assignments) ++counts[a];
    double expected = test_support::spherical_bic_oracle(pts.rows(), model.k(), 2,
                                                         counts, model.inertia);
    REQUIRE(bic(pts, model) == Catch::Approx(expected).epsilon(1e-12));

    // duplicate every point; the model with doubled assignments is still valid
    Matrix doubled(pts.rows() * 2, 2);
    ClusterModel dup;
    dup.centroids = model.centroids;
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            doubled(2 * i, j) = pts(i, j);
            doubled(2 * i + 1, j) = pts(i, j);
        }
        dup.assignments.push_back(model.assignments[i]);
        dup.assignments.push_back(model.assignments[i]);
    }
    dup.inertia = 2.0 * model.inertia;
    std::vector<std::size_t> dup_counts = {counts[0] * 2, counts[1] * 2};
    double expected_dup = test_support::spherical_bic_oracle(
        doubled.rows(), 2, 2, dup_counts, dup.inertia);
    REQUIRE(bic(doubled, dup) == Catch::Approx(expected_dup).epsilon(1e-12));
}

TEST_CASE("bic signals degenerate variance") {
    Matrix pts(6, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        pts(i, 0) = 1.0;
        pts(i, 1) = 2.0;
    }
    auto model = kmeans(pts, 1, 1);
    REQUIRE(model.inertia == 0.0);
    REQUIRE_THROWS_AS(bic(pts, model), NumericalError);
    REQUIRE_THROWS_AS(bic(pts, ClusterModel{Matrix(6, 2), std::vector<std::size_t>(6, 0), 0.0}),
                      DataError);  // M <= K
}

TEST_CASE("xmeans keeps a single Gaussian whole") {
    std::size_t ok = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(2000 + seed);
        auto pts = gaussian_blob(500, std::vector<double>{0.0, 0.0}, 1.0, rng);
        if (xmeans(pts, 5, seed).k() == 1) ++ok;
    }
    REQUIRE(ok >= 19);
}

TEST_CASE("xmeans finds three separated blobs") {
    std::size_t ok = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<std::size_t> truth;
        auto pts = three_blobs(3000 + seed, 120, &truth);
        auto model = xmeans(pts, 5, seed);
        if (model.k() == 3 && adjusted_rand_index(model.assignments, truth) == 1.0)
            ++ok;
    }
    REQUIRE(ok >= 19);
}

TEST_CASE("xmeans respects the cluster cap") {
    std::vector<std::size_t> truth;
    auto pts = three_blobs(17, 100, &truth);
    auto capped = xmeans(pts, 2, 9);
    REQUIRE(capped.k() == 2);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(4000 + seed);
        Matrix noise(120, 3);
        for (double& v : noise.storage()) v = rng.normal() * 5.0;
        auto model = xmeans(noise, 4, seed);
        REQUIRE(model.k() >= 1);
        REQUIRE(model.k() <= 4);
    }
}

TEST_CASE("clustering is equivariant under negation of all coordinates") {
    // negation is an exact rigid rotation in floating point
    std::vector<std::size_t> truth;
    auto pts = three_blobs(23, 90, &truth);
    Matrix neg(pts.rows(), pts.cols());
    for (std::size_t i = 0; i < pts.rows(); ++i)
        for (std::size_t j = 0; j < pts.cols(); ++j) neg(i, j) = -pts(i, j);

    auto a = kmeans(pts, 3, 12345);
    auto b = kmeans(neg, 3, 12345);
    REQUIRE(a.assignments == b.assignments);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 2; ++j)
            REQUIRE(b.centroids(c, j) == -a.centroids(c, j));

    // split children may swap slots under negation (the principal axis keeps
    // its canonical sign), so x-means is compared up to cluster relabeling
    auto xa = xmeans(pts, 5, 999);
    auto xb = xmeans(neg, 5, 999);
    REQUIRE(xa.k() == xb.k());
    REQUIRE(adjusted_rand_index(xa.assignments, xb.assignments) == 1.0);
}

TEST_CASE("clustering is equivariant under a general rotation within tolerance") {
    std::vector<std::size_t> truth;
    auto pts = three_blobs(29, 90, &truth);
    const double theta = 0.7;
    double c = std::cos(theta), s = std::sin(theta);
    Matrix rot(pts.rows(), 2);
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        rot(i, 0) = c * pts(i, 0) - s * pts(i, 1);
        rot(i, 1) = s * pts(i, 0) + c * pts(i, 1);
    }
    auto a = xmeans(pts, 5, 31);
    auto b = xmeans(rot, 5, 31);
    REQUIRE(a.k() == b.k());
    REQUIRE(adjusted_rand_index(a.assignments, b.assignments) == 1.0);
}

TEST_CASE("xmeans requires at least two points") {
    Matrix one(1, 2);
    REQUIRE_THROWS_AS(xmeans(one, 3, 1), DataError);
}
