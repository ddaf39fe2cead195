#pragma once

#include <armadillo>
#include <string>
#include <vector>

#include "zilcm/dataset.hpp"
#include "zilcm/kernels.hpp"
#include "zilcm/rng.hpp"

// Synthetic-data generation: the two-cluster simulation design used for the
// acceptance runs, generic per-family outcome generators, and a model-exact
// forward simulator for joint-distribution (Geweke) testing.

namespace zilcm {

struct CovariateSpec {
    std::string name;
    double mean = 0.0;
    double sd = 1.0;  // drawn once per individual, constant over time
};

struct SimFeature {
    std::string name;
    Family family = Family::Gaussian;
    ZipVariant zip_variant = ZipVariant::YauLee;
    arma::vec beta;        // main / positive / count part coefficients
    arma::vec beta_zero;   // ZIP zero part; empty = use zero_prob
    double sigma = 1.0;    // residual sd (gaussian / tobit / two-part positive)
    double zero_prob = 0.3;  // two-part structural zero probability; ZIP fallback
};

struct SimScenario {
    arma::uword m = 300;
    arma::uword timepoints = 10;
    arma::uword K = 2;
    arma::vec weights{arma::vec{0.7, 0.3}};
    std::vector<arma::vec> component_means;  // per cluster, one entry per feature
    std::vector<double> component_scales;    // covariance = scale * I per cluster
    std::vector<CovariateSpec> covariates;
    std::vector<SimFeature> features;
    std::uint64_t seed = 1;

    /// The two-cluster reference design: one Gaussian and one 30%-zero
    /// two-part outcome, 300 individuals x 10 time points, mixture
    /// 0.7 N(0, I) + 0.3 N((1,1), 1.5 I) on the random effects, covariates
    /// two strong (N(+-5,1)) and two weak (N(0,0.1^2)), and
    /// beta = (1.5, -2.0, 0.05, -0.05) for both outcomes.
    static SimScenario reference_design(std::uint64_t seed);

    void validate() const;
};

/// Cluster labels (0-based) and the m x R random-effect matrix, one scalar
/// effect per feature per individual.
std::pair<arma::mat, arma::uvec> generate_random_effects(const SimScenario& sc, RngStream& rng);

/// Outcome generators; gamma_col is the per-individual scalar effect for this
/// feature and z the shared time covariate (t / timepoints). Each returns an
/// m x T matrix.
arma::mat generate_gaussian_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                                    const arma::vec& z, const arma::vec& gamma_col, RngStream& rng);
arma::mat generate_twopart_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                                   const arma::vec& z, const arma::vec& gamma_col, RngStream& rng);
arma::mat generate_tobit_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                                 const arma::vec& z, const arma::vec& gamma_col, RngStream& rng);
arma::mat generate_zip_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                               const arma::vec& z, const arma::vec& gamma_col, RngStream& rng);

struct SimResult {
    LongitudinalDataset dataset;
    arma::uvec labels;       // true cluster per individual, 0-based
    arma::mat random_effects;  // m x R
};

/// Full dataset assembly: covariates, time design, outcomes, truth labels.
SimResult simulate_dataset(const SimScenario& sc);

/// Redraws every response in `ds` from the model's own families at the given
/// state (exact sampling distribution of the fitted model). Used by the
/// joint-distribution tests and the zero-mass Monte Carlo checks.
void simulate_from_model(LongitudinalDataset& ds, const GibbsModel& model, const SweepState& state,
                         RngStream& rng);

}  // namespace zilcm
