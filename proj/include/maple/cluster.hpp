#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "maple/errors.hpp"
#include "maple/linalg.hpp"
#include "maple/matrix.hpp"
#include "maple/rng.hpp"

namespace maple {

struct ClusterModel {
    Matrix centroids;                     // k x d
    std::vector<std::size_t> assignments; // one per point
    double inertia = 0.0;                 // sum of squared distances

    std::size_t k() const { return centroids.rows(); }
};

namespace detail {

inline std::size_t nearest_centroid(const Matrix& centroids,
                                    std::span<const double> point) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        double d = squared_distance(centroids.row(c), point);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

inline void recompute_means(const Matrix& points,
                            const std::vector<std::size_t>& assign,
                            Matrix& centroids) {
    const std::size_t k = centroids.rows();
    const std::size_t d = centroids.cols();
    std::vector<std::size_t> counts(k, 0);
    std::fill(centroids.storage().begin(), centroids.storage().end(), 0.0);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        auto row = points.row(i);
        auto c = centroids.row(assign[i]);
        for (std::size_t j = 0; j < d; ++j) c[j] += row[j];
        ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        auto row = centroids.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] /= static_cast<double>(counts[c]);
    }
}

inline double total_inertia(const Matrix& points, const Matrix& centroids,
                            const std::vector<std::size_t>& assign) {
    double s = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i)
        s += squared_distance(points.row(i), centroids.row(assign[i]));
    return s;
}

// Lloyd iterations until the assignment reaches a fixpoint or max_iter.
// An empty cluster is repaired by stealing the point farthest from its
// currently assigned centroid (ties to the lowest point index). Ends with
// centroids recomputed as exact member means.
inline void lloyd(const Matrix& points, Matrix& centroids,
                  std::vector<std::size_t>& assign, std::size_t max_iter) {
    const std::size_t n = points.rows();
    const std::size_t k = centroids.rows();
    assign.assign(n, 0);
    std::vector<std::size_t> prev;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        for (std::size_t i = 0; i < n; ++i)
            assign[i] = nearest_centroid(centroids, points.row(i));

        std::vector<std::size_t> counts(k, 0);
        for (std::size_t a : assign) ++counts[a];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] <= 1) continue;  // do not empty another cluster
                double d = squared_distance(points.row(i), centroids.row(assign[i]));
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            --counts[assign[worst]];
            assign[worst] = c;
            counts[c] = 1;
        }

        if (assign == prev) break;
        prev = assign;
        recompute_means(points, assign, centroids);
    }
    recompute_means(points, assign, centroids);
}

// k-means++ seeding: squared-distance weighted selection.
inline Matrix seed_centroids(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centroids(k, points.cols());
    std::size_t first = rng.below(n);
    std::copy(points.row(first).begin(), points.row(first).end(),
              centroids.row(0).begin());
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i)
        d2[i] = squared_distance(points.row(i), centroids.row(0));
    for (std::size_t c = 1; c < k; ++c) {
        double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick;
        if (total <= 0.0) {
            pick = rng.below(n);
        } else {
            double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy(points.row(pick).begin(), points.row(pick).end(),
                  centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
    }
    return centroids;
}

}  // namespace detail

inline ClusterModel kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100) {
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (points.rows() < k)
        throw DataError("kmeans: " + std::to_string(points.rows()) +
                        " points cannot form " + std::to_string(k) + " clusters");
    ClusterModel model;
    Rng rng(seed);
    model.centroids = detail::seed_centroids(points, k, rng);
    detail::lloyd(points, model.centroids, model.assignments, max_iter);
    model.inertia = detail::total_inertia(points, model.centroids, model.assignments);
    return model;
}

// BIC of a hard-assignment spherical Gaussian mixture: maximized
// log-likelihood with shared variance sigma^2 = inertia / (d (M - K)) and
// priors M_j / M, penalized by (q / 2) ln M with q = K (d + 1) free
// parameters. Larger is better.
inline double bic(const Matrix& points, const ClusterModel& model) {
    const double m = static_cast<double>(points.rows());
    const double k = static_cast<double>(model.k());
    const double d = static_cast<double>(points.cols());
    if (points.rows() <= model.k())
        throw DataError("bic: need more points than clusters");
    const double sigma2 = model.inertia / (d * (m - k));
    if (!(sigma2 > 0.0))
        throw NumericalError("bic: degenerate variance (all points coincide with centroids)");
    std::vector<double> counts(model.k(), 0.0);
    for (std::size_t a : model.assignments) counts[a] += 1.0;
    double log_lik = -m * std::log(m) - 0.5 * m * d * std::log(2.0 * 3.14159265358979323846 * sigma2) -
                     0.5 * d * (m - k);
    for (double c : counts)
        if (c > 0.0) log_lik += c * std::log(c);
    const double q = k * (d + 1.0);
    return log_lik - 0.5 * q * std::log(m);
}

namespace detail {

// Local BIC of a sub-model over its own members; +inf marks a perfect
// (zero-variance) fit so such children always win over an imperfect parent.
inline double local_bic_or_inf(const Matrix& pts, const ClusterModel& model) {
    if (model.inertia <= 0.0) return std::numeric_limits<double>::infinity();
    return bic(pts, model);
}

}  // namespace detail

// Starts from one cluster and repeatedly tries to split each cluster in two,
// keeping a split only when the children's local BIC beats the parent's.
// Children are initialized at the parent centroid displaced by one standard
// deviation along the members' principal axis. Stops when no split is
// accepted or the cluster count reaches max_clusters, then runs a global
// Lloyd pass.
inline ClusterModel xmeans(const Matrix& points, std::size_t max_clusters,
                           std::uint64_t seed, std::size_t max_iter = 100) {
    if (points.rows() < 2) throw DataError("xmeans: need at least 2 points");
    if (max_clusters < 1) throw ConfigError("xmeans: max_clusters must be >= 1");
    const std::size_t d = points.cols();
    ClusterModel model = kmeans(points, 1, seed, max_iter);
    if (max_clusters == 1) return model;

    bool improved = true;
    while (improved && model.k() < max_clusters) {
        improved = false;
        const std::size_t pass_k = model.k();
        for (std::size_t c = 0; c < pass_k && model.k() < max_clusters; ++c) {
            std::vector<std::size_t> member_idx;
            for (std::size_t i = 0; i < points.rows(); ++i)
                if (model.assignments[i] == c) member_idx.push_back(i);
            if (member_idx.size() < 3) continue;
            Matrix members = gather_rows(points, member_idx);

            ClusterModel parent;
            parent.centroids = Matrix(1, d);
            std::copy(model.centroids.row(c).begin(), model.centroids.row(c).end(),
                      parent.centroids.row(0).begin());
            parent.assignments.assign(member_idx.size(), 0);
            parent.inertia = detail::total_inertia(members, parent.centroids,
                                                   parent.assignments);
            if (parent.inertia <= 0.0) continue;  // already a perfect fit
            const double parent_bic = detail::local_bic_or_inf(members, parent);

            // principal axis of the member scatter
            Matrix cov(d, d);
            std::vector<double> mean(d, 0.0);
            for (std::size_t i = 0; i < members.rows(); ++i)
                for (std::size_t j = 0; j < d; ++j) mean[j] += members(i, j);
            for (double& v : mean) v /= static_cast<double>(members.rows());
            for (std::size_t i = 0; i < members.rows(); ++i)
                for (std::size_t a = 0; a < d; ++a)
                    for (std::size_t b = a; b < d; ++b) {
                        double va = members(i, a) - mean[a];
                        double vb = members(i, b) - mean[b];
                        cov(a, b) += va * vb;
                    }
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = a; b < d; ++b) {
                    cov(a, b) /= static_cast<double>(members.rows());
                    cov(b, a) = cov(a, b);
                }
            auto eig = jacobi_eigen(cov);
            if (!(eig.values[0] > 0.0)) continue;
            const double delta = std::sqrt(eig.values[0]);

            ClusterModel split;
            split.centroids = Matrix(2, d);
            for (std::size_t j = 0; j < d; ++j) {
                split.centroids(0, j) = mean[j] - delta * eig.vectors(j, 0);
                split.centroids(1, j) = mean[j] + delta * eig.vectors(j, 0);
            }
            detail::lloyd(members, split.centroids, split.assignments, max_iter);
            split.inertia = detail::total_inertia(members, split.centroids,
                                                  split.assignments);
            const double child_bic = detail::local_bic_or_inf(members, split);
            if (!(child_bic > parent_bic)) continue;

            // keep child 0 in slot c, append child 1
            const std::size_t fresh = model.k();
            Matrix grown(fresh + 1, d);
            std::copy(model.centroids.storage().begin(), model.centroids.storage().end(),
                      grown.storage().begin());
            for (std::size_t j = 0; j < d; ++j) {
                grown(c, j) = split.centroids(0, j);
                grown(fresh, j) = split.centroids(1, j);
            }
            model.centroids = std::move(grown);
            for (std::size_t i = 0; i < member_idx.size(); ++i)
                model.assignments[member_idx[i]] = split.assignments[i] == 0 ? c : fresh;
            improved = true;
        }
    }

    detail::lloyd(points, model.centroids, model.assignments, max_iter);
    model.inertia = detail::total_inertia(points, model.centroids, model.assignments);
    return model;
}

}  // namespace maple
