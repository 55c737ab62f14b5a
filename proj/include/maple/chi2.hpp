#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace maple {

namespace detail {

// Series expansion of the regularized lower incomplete gamma P(a, x),
// accurate for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double term = sum;
    for (int n = 0; n < 10000; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction (modified Lentz) for the regularized upper incomplete
// gamma Q(a, x), accurate for x >= a + 1.
inline double gamma_q_cont_fraction(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-17) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
inline double regularized_gamma_p(double a, double x) {
    if (!(a > 0.0)) throw std::invalid_argument("regularized_gamma_p: a must be positive");
    if (x < 0.0) throw std::invalid_argument("regularized_gamma_p: x must be nonnegative");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    double q = detail::gamma_q_cont_fraction(a, x);
    return 1.0 - q;
}

// Chi-squared CDF with `dof` degrees of freedom: P(dof/2, x/2).
inline double chi2_cdf(double x, int dof) {
    if (dof < 1) throw std::invalid_argument("chi2_cdf: dof must be >= 1");
    if (x < 0.0) throw std::invalid_argument("chi2_cdf: x must be nonnegative");
    return regularized_gamma_p(0.5 * static_cast<double>(dof), 0.5 * x);
}

// Inverse chi-squared CDF by bisection on chi2_cdf, to absolute tolerance
// 1e-10 in x. p must lie in [0, 1).
inline double chi2_inv(double p, int dof) {
    if (!(p >= 0.0 && p < 1.0))
        throw std::invalid_argument("chi2_inv: p must lie in [0, 1)");
    if (p == 0.0) return 0.0;
    double lo = 0.0;
    double hi = static_cast<double>(dof);
    while (chi2_cdf(hi, dof) < p) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e12) break;
    }
    while (hi - lo > 1e-10) {
        double mid = 0.5 * (lo + hi);
        if (chi2_cdf(mid, dof) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace maple
