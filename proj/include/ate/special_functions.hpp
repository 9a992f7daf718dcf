#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ate::special {

/*
 * log Gamma(x) for x > 0 (Lanczos, g = 607/128, 15 terms; relative error
 * around 1e-15). Used instead of std::lgamma, which writes the global signgam
 * in glibc and is therefore not safe to call from concurrent workers.
 */
inline double log_gamma(double x) {
    static constexpr std::array<double, 15> c{
        0.99999999999999709182,     57.156235665862923517,     -59.597960355475491248,
        14.136097974741747174,      -0.49191381609762019978,   .33994649984811888699e-4,
        .46523628927048575665e-4,   -.98374475304879564677e-4, .15808870322491248884e-3,
        -.21026444172410488319e-3,  .21743961811521264320e-3,  -.16431810653676389022e-3,
        .84418223983852743293e-4,   -.26190838401581408670e-4, .36899182659531622704e-5};
    if (!(x > 0.0)) throw std::domain_error("log_gamma: argument must be positive");
    if (x < 0.5) {
        // Reflection keeps the series in its accurate range.
        return std::log(M_PI / std::sin(M_PI * x)) - log_gamma(1.0 - x);
    }
    constexpr double g = 607.0 / 128.0;
    const double z = x - 1.0;
    double sum = c[0];
    for (std::size_t k = 1; k < c.size(); ++k) sum += c[k] / (z + static_cast<double>(k));
    const double t = z + g + 0.5;
    return 0.5 * std::log(2.0 * M_PI) + (z + 0.5) * std::log(t) - t + std::log(sum);
}

inline double log_beta(double a, double b) { return log_gamma(a) + log_gamma(b) - log_gamma(a + b); }

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int max_iter = 1000;
    constexpr double eps = 1e-16;
    constexpr double tiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b) with a caller-supplied log B(a, b).
inline double ibeta(double a, double b, double x, double log_beta_ab) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta_ab;
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Regularized incomplete beta I_x(a, b), the Beta(a, b) CDF at x.
inline double ibeta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("ibeta: shape parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    return ibeta(a, b, x, log_beta(a, b));
}

/// Regularized lower incomplete gamma P(a, x), the Gamma(a, 1) CDF at x.
inline double gamma_p(double a, double x) {
    if (!(a > 0.0)) throw std::domain_error("gamma_p: shape must be positive");
    if (x <= 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    constexpr int max_iter = 10000;
    constexpr double eps = 1e-16;
    const double log_front = a * std::log(x) - x - log_gamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double del = 1.0 / a;
        double sum = del;
        for (int n = 0; n < max_iter; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * eps) break;
        }
        return std::min(1.0, sum * std::exp(log_front));
    }
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= max_iter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return std::max(0.0, 1.0 - std::exp(log_front) * h);
}

inline double beta_log_density(double a, double b, double x, double log_beta_ab) {
    if (x <= 0.0 || x >= 1.0) return -std::numeric_limits<double>::infinity();
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_ab;
}

inline double gamma_log_density(double shape, double rate, double x) {
    if (x <= 0.0) return -std::numeric_limits<double>::infinity();
    return shape * std::log(rate) - log_gamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

}  // namespace ate::special
