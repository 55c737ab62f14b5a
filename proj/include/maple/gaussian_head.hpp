#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maple/chi2.hpp"
#include "maple/errors.hpp"
#include "maple/linalg.hpp"
#include "maple/matrix.hpp"
#include "maple/pca.hpp"
#include "maple/relabel.hpp"

namespace maple {

enum class DistanceMode { mahalanobis, euclidean };

// Per-pseudo-class centroids with one covariance pooled over class-centered
// training representations, kept factorized for distance evaluation.
struct GaussianHead {
    Matrix centroids;    // K x d'
    Matrix covariance;   // d' x d'
    Matrix chol_lower;   // factor of covariance + jitter * I
    double jitter = 0.0; // diagonal jitter that made the factorization succeed
    std::size_t dof = 0; // chi-squared degrees of freedom (= d')
    LabelMap label_map;

    std::size_t num_classes() const { return centroids.rows(); }
};

namespace detail {

// Escalating diagonal jitter: start at 1e-20 and multiply by 10 up to 1e-8.
inline bool factorize_with_jitter(const Matrix& sigma, Matrix& lower,
                                  double& jitter_used) {
    if (cholesky_lower(sigma, lower)) {
        jitter_used = 0.0;
        return true;
    }
    for (double jitter = 1e-20; jitter <= 1.000001e-8; jitter *= 10.0) {
        Matrix adjusted = sigma;
        for (std::size_t i = 0; i < adjusted.rows(); ++i) adjusted(i, i) += jitter;
        if (cholesky_lower(adjusted, lower)) {
            jitter_used = jitter;
            return true;
        }
    }
    return false;
}

}  // namespace detail

// Class means and pooled covariance (biased, normalized by N) over the
// reduced training representations.
inline GaussianHead fit_head(const Matrix& z, std::span<const int> pseudo_labels,
                             const LabelMap& label_map) {
    label_map.validate();
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    const std::size_t num_classes = label_map.num_pseudo();
    if (n != pseudo_labels.size()) throw DataError("fit_head: size mismatch");
    if (n < 1) throw DataError("fit_head: need at least one sample");

    GaussianHead head;
    head.label_map = label_map;
    head.dof = d;
    head.centroids = Matrix(num_classes, d);
    std::vector<double> counts(num_classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        int c = pseudo_labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
            throw DataError("fit_head: pseudo-label out of range");
        counts[c] += 1.0;
        for (std::size_t j = 0; j < d; ++j) head.centroids(c, j) += z(i, j);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0.0)
            throw DataError("fit_head: pseudo-class " + std::to_string(c) +
                            " has no samples");
        for (std::size_t j = 0; j < d; ++j)
            head.centroids(c, j) /= counts[c];
    }

    head.covariance = Matrix(d, d);
    std::vector<double> centered(d);
    for (std::size_t i = 0; i < n; ++i) {
        auto mu = head.centroids.row(pseudo_labels[i]);
        for (std::size_t j = 0; j < d; ++j) centered[j] = z(i, j) - mu[j];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b)
                head.covariance(a, b) += centered[a] * centered[b];
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            head.covariance(a, b) /= static_cast<double>(n);
            head.covariance(b, a) = head.covariance(a, b);
        }

    if (!detail::factorize_with_jitter(head.covariance, head.chol_lower, head.jitter))
        throw NumericalError("fit_head: singular covariance after maximum jitter");
    return head;
}

// sqrt((z - mu_c)^T Sigma^-1 (z - mu_c)) via triangular solve; the covariance
// inverse is never formed.
inline double mahalanobis(const GaussianHead& head, std::span<const double> z,
                          std::size_t class_index) {
    if (class_index >= head.num_classes())
        throw DataError("mahalanobis: class index out of range");
    std::vector<double> r(z.size());
    auto mu = head.centroids.row(class_index);
    for (std::size_t j = 0; j < z.size(); ++j) r[j] = z[j] - mu[j];
    solve_lower_in_place(head.chol_lower, r);
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
}

// ||z - mu_c||; the ablation replacement for the Mahalanobis distance.
inline double euclidean(const GaussianHead& head, std::span<const double> z,
                        std::size_t class_index) {
    if (class_index >= head.num_classes())
        throw DataError("euclidean: class index out of range");
    return euclidean_distance(z, head.centroids.row(class_index));
}

struct Prediction {
    int original_class = 0;
    int pseudo_class = 0;
    double p_md = 0.0;        // predictive probability of the closest class
    double uncertainty = 0.0; // 1 - p_md
    std::vector<double> md_per_class;
    std::optional<int> softmax_class;  // remapped argmax of logits, if given
};

// Distance to every centroid, closest class (ties to the lowest index),
// chi-squared predictive probability on the squared distance, and the
// complementary uncertainty.
inline Prediction predict(const PcaTransform* pca, const GaussianHead& head,
                          std::span<const double> embedding,
                          const std::vector<double>* logits = nullptr,
                          DistanceMode mode = DistanceMode::mahalanobis) {
    std::vector<double> reduced;
    std::span<const double> z = embedding;
    if (pca != nullptr) {
        reduced = pca->transform(embedding);
        z = reduced;
    }
    if (z.size() != static_cast<std::size_t>(head.dof))
        throw DataError("predict: representation dimension does not match head");

    Prediction pred;
    pred.md_per_class.resize(head.num_classes());
    for (std::size_t c = 0; c < head.num_classes(); ++c)
        pred.md_per_class[c] = mode == DistanceMode::mahalanobis
                                   ? mahalanobis(head, z, c)
                                   : euclidean(head, z, c);
    std::size_t best = 0;
    for (std::size_t c = 1; c < head.num_classes(); ++c)
        if (pred.md_per_class[c] < pred.md_per_class[best]) best = c;
    pred.pseudo_class = static_cast<int>(best);
    pred.original_class = head.label_map.remap(pred.pseudo_class);
    const double md = pred.md_per_class[best];
    pred.p_md = 1.0 - chi2_cdf(md * md, static_cast<int>(head.dof));
    pred.uncertainty = 1.0 - pred.p_md;

    if (logits != nullptr) {
        if (logits->size() != head.num_classes())
            throw DataError("predict: logits size does not match pseudo-class count");
        std::size_t arg = 0;
        for (std::size_t c = 1; c < logits->size(); ++c)
            if ((*logits)[c] > (*logits)[arg]) arg = c;
        pred.softmax_class = head.label_map.remap(static_cast<int>(arg));
    }
    return pred;
}

}  // namespace maple
