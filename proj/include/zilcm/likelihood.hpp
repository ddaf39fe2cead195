#pragma once

#include <armadillo>

#include "zilcm/dataset.hpp"

// Linear predictors and observed-data log-likelihoods for the four response
// families. Everything here is a pure function of its arguments.

namespace zilcm {

/// x.beta + z.gamma_slice; throws on dimension mismatch.
double linear_predictor(const arma::rowvec& x_row, const arma::vec& beta, const arma::rowvec& z_row,
                        const arma::vec& gamma_slice);

/// Per-cell observed-data log-likelihood contributions.
double loglik_gaussian_cell(double y, double eta, double sigma2);
/// Left-censored at zero: y == 0 contributes log Phi(-eta/sigma).
double loglik_tobit_cell(double y, double eta, double sigma2);
/// psi_zero is the logit of P(y = 0); positives are log-normal around eta_pos.
double loglik_twopart_cell(double y, double psi_zero, double eta_pos, double sigma2);
/// psi_zero is the logit of the structural-zero probability.
double loglik_zip_cell(double y, double psi_zero, double log_lambda);

/// Coefficients for one feature, one entry per family_parts(spec) element.
/// sigma2 is aligned with the same order and ignored where the part has none.
struct FeatureParams {
    std::vector<arma::vec> beta;
    std::vector<double> sigma2;
};

/// Observed-data log-likelihood of one (individual, feature) block given the
/// individual's stacked random-effect vector.
double feature_loglik(const FeatureSpec& spec, const FeatureParams& params,
                      const FeatureBlock& block, const arma::vec& gamma_i,
                      const RandomEffectsLayout& layout, arma::uword feature_index);

}  // namespace zilcm
