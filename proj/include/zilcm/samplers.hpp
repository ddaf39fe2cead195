#pragma once

#include <armadillo>

#include "zilcm/rng.hpp"

// Random-variate primitives used by the Gibbs kernels. Every sampler draws
// exclusively from the supplied RngStream, so a (seed, stream) pair pins the
// whole sequence.

namespace zilcm {

/// Draw from N(mu, sigma^2) restricted to (lower, upper). Either bound may be
/// infinite. Uses the inverse CDF when the interval mass is >= 1e-6 and
/// one-sided exponential rejection (Robert 1995) in the extreme tails.
double sample_truncated_normal(double mu, double sigma, double lower, double upper,
                               RngStream& rng);

/// Inverse-Gaussian with E[X] = mean and Var[X] = mean^3 / shape
/// (Michael-Schucany-Haas transformation).
double sample_inverse_gaussian(double mean, double shape, RngStream& rng);

/// Dirichlet(alpha); components sum to 1 exactly up to rounding.
arma::vec sample_dirichlet(const arma::vec& alpha, RngStream& rng);

/// Inverse-Wishart with degrees of freedom df > q-1 and SPD scale matrix;
/// E[X] = scale / (df - q - 1) for df > q + 1.
arma::mat sample_inverse_wishart(double df, const arma::mat& scale, RngStream& rng);

/// Polya-Gamma PG(b, c) for positive integer b: exact Devroye sampler for
/// PG(1, c), summed b times. E[PG(b,c)] = (b/(2c)) tanh(c/2).
double sample_polya_gamma(double b, double c, RngStream& rng);

/// Multivariate normal N(mean, cov) via the lower Cholesky factor of cov.
arma::vec sample_mvn(const arma::vec& mean, const arma::mat& cov, RngStream& rng);

/// Multivariate normal in canonical form: precision P and linear term h,
/// i.e. N(P^-1 h, P^-1). Throws std::runtime_error if P is not SPD.
arma::vec sample_mvn_canonical(const arma::vec& h, const arma::mat& precision, RngStream& rng);

/// Index draw from unnormalized log-weights (log-sum-exp normalization).
arma::uword sample_categorical_log(const arma::vec& log_weights, RngStream& rng);

}  // namespace zilcm
