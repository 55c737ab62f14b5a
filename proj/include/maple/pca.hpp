#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "maple/errors.hpp"
#include "maple/linalg.hpp"
#include "maple/matrix.hpp"

namespace maple {

// Standardization statistics plus an orthonormal projection to the smallest
// number of principal components explaining at least the target fraction of
// variance.
struct PcaTransform {
    std::vector<double> mean;
    std::vector<double> stddev;             // zero-variance dims replaced by 1
    std::vector<std::uint8_t> zero_variance;
    Matrix components;                      // d x d', columns orthonormal
    std::vector<double> eigenvalues;        // all d, descending
    double explained_fraction = 0.0;

    std::size_t input_dim() const { return components.rows(); }
    std::size_t reduced_dim() const { return components.cols(); }

    std::vector<double> transform(std::span<const double> x) const {
        if (x.size() != input_dim())
            throw DataError("pca transform: input has dimension " +
                            std::to_string(x.size()) + ", expected " +
                            std::to_string(input_dim()));
        std::vector<double> std_x(x.size());
        for (std::size_t j = 0; j < x.size(); ++j)
            std_x[j] = (x[j] - mean[j]) / stddev[j];
        std::vector<double> z(reduced_dim(), 0.0);
        for (std::size_t c = 0; c < reduced_dim(); ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j)
                s += components(j, c) * std_x[j];
            z[c] = s;
        }
        return z;
    }

    Matrix transform_batch(const Matrix& x) const {
        Matrix out(x.rows(), reduced_dim());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto z = transform(x.row(i));
            std::copy(z.begin(), z.end(), out.row(i).begin());
        }
        return out;
    }
};

// Standardizes (biased per-dimension statistics), eigendecomposes the
// covariance of the standardized data and keeps the smallest descending
// eigenvalue prefix reaching the variance target.
inline PcaTransform fit_pca(const Matrix& data, double variance_target = 0.95) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (n < 2) throw DataError("fit_pca: need at least 2 samples");
    if (!(variance_target > 0.0 && variance_target <= 1.0))
        throw ConfigError("fit_pca: variance target must lie in (0, 1]");

    PcaTransform pca;
    pca.mean.assign(d, 0.0);
    pca.stddev.assign(d, 0.0);
    pca.zero_variance.assign(d, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) pca.mean[j] += data(i, j);
    for (double& m : pca.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double v = data(i, j) - pca.mean[j];
            pca.stddev[j] += v * v;
        }
    bool any_variance = false;
    for (std::size_t j = 0; j < d; ++j) {
        pca.stddev[j] = std::sqrt(pca.stddev[j] / static_cast<double>(n));
        if (pca.stddev[j] > 0.0) {
            any_variance = true;
        } else {
            pca.stddev[j] = 1.0;
            pca.zero_variance[j] = 1;
        }
    }
    if (!any_variance)
        throw DataError("fit_pca: all dimensions are constant (zero total variance)");

    Matrix z(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            z(i, j) = (data(i, j) - pca.mean[j]) / pca.stddev[j];
    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b) cov(a, b) += z(i, a) * z(i, b);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) /= static_cast<double>(n);
            cov(b, a) = cov(a, b);
        }

    auto eig = jacobi_eigen(cov);
    pca.eigenvalues = eig.values;
    double trace = 0.0;
    for (double v : eig.values) trace += std::max(v, 0.0);
    double prefix = 0.0;
    std::size_t keep = 0;
    while (keep < d) {
        prefix += std::max(eig.values[keep], 0.0);
        ++keep;
        if (prefix >= variance_target * trace) break;
    }
    pca.explained_fraction = prefix / trace;
    pca.components = Matrix(d, keep);
    for (std::size_t c = 0; c < keep; ++c)
        for (std::size_t j = 0; j < d; ++j)
            pca.components(j, c) = eig.vectors(j, c);
    return pca;
}

}  // namespace maple
