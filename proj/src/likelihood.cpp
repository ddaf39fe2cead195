#include "zilcm/likelihood.hpp"

#include <cmath>

#include "zilcm/math.hpp"

namespace zilcm {

double linear_predictor(const arma::rowvec& x_row, const arma::vec& beta, const arma::rowvec& z_row,
                        const arma::vec& gamma_slice) {
    if (x_row.n_elem != beta.n_elem || z_row.n_elem != gamma_slice.n_elem)
        throw std::invalid_argument("linear_predictor: dimension mismatch");
    return arma::dot(x_row, beta) + arma::dot(z_row, gamma_slice);
}

double loglik_gaussian_cell(double y, double eta, double sigma2) {
    if (!std::isfinite(eta)) throw std::domain_error("loglik_gaussian_cell: non-finite predictor");
    const double r = y - eta;
    return -0.5 * (kLogTwoPi + std::log(sigma2) + r * r / sigma2);
}

double loglik_tobit_cell(double y, double eta, double sigma2) {
    if (!std::isfinite(eta)) throw std::domain_error("loglik_tobit_cell: non-finite predictor");
    const double sigma = std::sqrt(sigma2);
    if (y > 0.0) {
        const double r = y - eta;
        return -0.5 * (kLogTwoPi + std::log(sigma2) + r * r / sigma2);
    }
    return log_norm_cdf(-eta / sigma);
}

double loglik_twopart_cell(double y, double psi_zero, double eta_pos, double sigma2) {
    if (!std::isfinite(psi_zero) || !std::isfinite(eta_pos))
        throw std::domain_error("loglik_twopart_cell: non-finite predictor");
    if (y == 0.0) return log_sigmoid(psi_zero);
    // log-normal density of y, including the 1/y Jacobian
    const double ly = std::log(y);
    const double r = ly - eta_pos;
    return log_sigmoid(-psi_zero) - ly - 0.5 * (kLogTwoPi + std::log(sigma2) + r * r / sigma2);
}

double loglik_zip_cell(double y, double psi_zero, double log_lambda) {
    if (!std::isfinite(psi_zero) || !std::isfinite(log_lambda))
        throw std::domain_error("loglik_zip_cell: non-finite predictor");
    const double lambda = std::exp(log_lambda);
    if (y == 0.0) {
        // p + (1-p) e^{-lambda}
        return log_add_exp(log_sigmoid(psi_zero), log_sigmoid(-psi_zero) - lambda);
    }
    return log_sigmoid(-psi_zero) + y * log_lambda - lambda - std::lgamma(y + 1.0);
}

double feature_loglik(const FeatureSpec& spec, const FeatureParams& params,
                      const FeatureBlock& block, const arma::vec& gamma_i,
                      const RandomEffectsLayout& layout, arma::uword feature_index) {
    const arma::uword n = block.y.n_elem;
    double total = 0.0;

    auto slice_of = [&](Part p) -> arma::vec {
        const auto& s = layout.find(feature_index, p);
        return gamma_i.subvec(s.offset, s.offset + s.dim - 1);
    };

    switch (spec.family) {
        case Family::Gaussian: {
            const arma::vec eta = block.X * params.beta[0] + block.z * slice_of(Part::Main);
            for (arma::uword j = 0; j < n; ++j)
                total += loglik_gaussian_cell(block.y(j), eta(j), params.sigma2[0]);
            break;
        }
        case Family::Tobit: {
            const arma::vec eta = block.X * params.beta[0] + block.z * slice_of(Part::Main);
            for (arma::uword j = 0; j < n; ++j)
                total += loglik_tobit_cell(block.y(j), eta(j), params.sigma2[0]);
            break;
        }
        case Family::TwoPart: {
            const arma::vec psi = block.X * params.beta[0] + block.z * slice_of(Part::Zero);
            const arma::vec eta = block.X * params.beta[1] + block.z * slice_of(Part::Positive);
            for (arma::uword j = 0; j < n; ++j)
                total += loglik_twopart_cell(block.y(j), psi(j), eta(j), params.sigma2[1]);
            break;
        }
        case Family::Zip: {
            arma::vec psi = block.X * params.beta[0];
            if (spec.zip_variant == ZipVariant::YauLee) psi += block.z * slice_of(Part::Zero);
            const arma::vec llam = block.X * params.beta[1] + block.z * slice_of(Part::Count);
            for (arma::uword j = 0; j < n; ++j)
                total += loglik_zip_cell(block.y(j), psi(j), llam(j));
            break;
        }
    }
    return total;
}

}  // namespace zilcm
