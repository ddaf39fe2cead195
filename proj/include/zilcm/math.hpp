#pragma once

#include <cmath>
#include <limits>

// Scalar special functions shared by likelihoods and samplers.

namespace zilcm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)
inline constexpr double kSqrtTwo = 1.4142135623730950488;
inline constexpr double kInvSqrtTwoPi = 0.39894228040143267794;

/// Standard normal density.
inline double norm_pdf(double x) { return kInvSqrtTwoPi * std::exp(-0.5 * x * x); }

inline double log_norm_pdf(double x) { return -0.5 * (kLogTwoPi + x * x); }

/// Standard normal CDF.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrtTwo); }

/// log Phi(x), stable into the far left tail.
double log_norm_cdf(double x);

/// Inverse of the standard normal CDF (Wichura's AS 241, double precision).
double norm_quantile(double p);

/// log(1 + e^x) without overflow.
inline double log1p_exp(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

/// Logistic function 1/(1+e^-x).
inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log sigmoid(x) = -log(1+e^-x).
inline double log_sigmoid(double x) { return -log1p_exp(-x); }

/// log(a + b) given la = log a, lb = log b.
inline double log_add_exp(double la, double lb) {
    if (la == -kInf) return lb;
    if (lb == -kInf) return la;
    const double m = la > lb ? la : lb;
    return m + std::log(std::exp(la - m) + std::exp(lb - m));
}

}  // namespace zilcm
