#pragma once

#include <armadillo>
#include <map>
#include <string>
#include <vector>

#include "zilcm/dataset.hpp"
#include "zilcm/likelihood.hpp"
#include "zilcm/rng.hpp"

// Full-conditional update kernels, one per parameter block, composing into a
// deterministic-scan Gibbs sweep over the complete model.

namespace zilcm {

struct SamplerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Priors {
    double mu_prior_var = 100.0;     // mu_k ~ N(0, mu_prior_var * I)
    double psi_df_extra = 2.0;       // Psi_k ~ IW(q + psi_df_extra, psi_scale * I)
    double psi_scale = 1.0;
    double dirichlet_alpha = 1.0;    // pi ~ Dirichlet(alpha, ..., alpha)
    double sigma2_shape = 0.01;      // sigma^2 ~ IG(shape, rate)
    double sigma2_rate = 0.01;
    double balasso_a = 1.0;          // lambda_j^2 ~ Gamma(a, b)
    double balasso_b = 0.1;
    double unshrunk_var = 100.0;     // prior variance for unshrunk coefficients
};

/// Random-walk Metropolis settings for the Poisson blocks.
struct MhOptions {
    double init_scale = 0.1;
    double target_scalar = 0.44;
    double target_block = 0.234;
    arma::uword batch = 25;  // adaptation batch length
};

/// Which blocks a sweep updates; tests freeze blocks to isolate conditionals.
struct UpdateFlags {
    bool augmentations = true;
    bool random_effects = true;
    bool fixed_effects = true;
    bool shrinkage = true;  // tau^2 / lambda^2 hierarchy; off = fixed prior variances
    bool sigma2 = true;
    bool allocations = true;
    bool mixing = true;
    bool cluster_params = true;
};

struct MixtureState {
    arma::uword K = 1;
    arma::vec pi;                // K
    arma::uvec C;                // m, 0-based
    std::vector<arma::vec> mu;   // K vectors of length q
    std::vector<arma::mat> psi;  // K SPD q x q matrices
};

/// Per-coefficient BaLasso hierarchy for one coefficient block.
struct ShrinkageState {
    arma::vec tau2;
    arma::vec lambda2;
};

/// Coefficient block for one (feature, part), plus its shrinkage state,
/// residual variance where the part has one, and MH adaptation bookkeeping
/// for Poisson count parts.
struct PartState {
    arma::uword feature = 0;
    Part part = Part::Main;
    arma::vec beta;
    ShrinkageState shrink;
    bool has_sigma2 = false;
    double sigma2 = 1.0;
    // adaptive random-walk state (ZIP count part only)
    double mh_log_scale = 0.0;
    arma::uword mh_accepted = 0, mh_proposed = 0;
    arma::uword mh_batch_accepted = 0, mh_batch_count = 0, mh_batches = 0;
};

struct SweepState {
    MixtureState mixture;
    arma::mat gamma;                // m x q
    std::vector<PartState> parts;   // canonical (feature, part) order
    // latent augmentations, indexed [feature][individual]; empty where unused
    std::vector<std::vector<arma::vec>> ystar;  // Tobit latent responses
    std::vector<std::vector<arma::vec>> omega;  // Polya-Gamma weights, logistic parts
    std::vector<std::vector<arma::vec>> zeros;  // ZIP structural-zero indicators
    // per-individual MH adaptation for ZIP count random-effect slices
    arma::vec gamma_mh_log_scale;
    arma::uvec gamma_mh_accepted, gamma_mh_proposed;
    arma::uvec gamma_mh_batch_accepted, gamma_mh_batch_count, gamma_mh_batches;
};

enum class InitStrategy { KMeans, Random };

/// BaLasso hierarchy conditionals. 1/tau_j^2 is inverse-Gaussian with mean
/// sqrt(lambda_j^2 / beta_j^2) and shape lambda_j^2 (|beta_j| floored at 1e-8);
/// lambda_j^2 is Gamma(a + 1, b + tau_j^2 / 2).
double balasso_draw_tau2(double beta_j, double lambda2, RngStream& rng);
double balasso_draw_lambda2(double tau2, const Priors& priors, RngStream& rng);

/// The model bound to one dataset: precomputed designs plus every Gibbs
/// kernel. Immutable after construction; a SweepState carries all mutable
/// sampling state, so one GibbsModel can serve several chains.
class GibbsModel {
public:
    GibbsModel(const LongitudinalDataset& ds, Priors priors, arma::uword K,
               MhOptions mh = MhOptions{});

    const LongitudinalDataset& dataset() const { return *ds_; }
    const RandomEffectsLayout& layout() const { return layout_; }
    const Priors& priors() const { return priors_; }
    arma::uword K() const { return K_; }
    arma::uword n_parts() const { return part_specs_.size(); }
    arma::uword part_index(arma::uword feature, Part part) const;
    /// Coefficients exempt from shrinkage (the intercept column, if present).
    const std::vector<bool>& shrink_mask() const { return shrink_mask_; }

    SweepState initialize(RngStream& rng, InitStrategy strategy = InitStrategy::KMeans) const;

    /// One full deterministic-scan sweep:
    /// augmentations -> random effects -> fixed effects + shrinkage -> sigma^2
    /// -> allocations -> mixing weights -> cluster parameters.
    /// Returns wall-clock seconds per block keyed by block name.
    std::map<std::string, double> sweep(SweepState& state, RngStream& rng, bool adapt = false,
                                        const UpdateFlags& flags = UpdateFlags{}) const;

    // -- individual kernels ---------------------------------------------------
    void augment_tobit(SweepState& state, RngStream& rng) const;
    void augment_logistic_pg(SweepState& state, RngStream& rng) const;
    void augment_zip_indicators(SweepState& state, RngStream& rng) const;
    void update_random_effects(SweepState& state, RngStream& rng, bool adapt = false) const;
    void update_fixed_effects_balasso(arma::uword part_idx, SweepState& state, RngStream& rng,
                                      bool update_shrinkage = true) const;
    void update_poisson_coefficients(arma::uword part_idx, SweepState& state, RngStream& rng,
                                     bool adapt) const;
    void update_sigma2(SweepState& state, RngStream& rng) const;
    /// Draws allocations and returns the m x K membership probability table.
    arma::mat update_allocations(SweepState& state, RngStream& rng) const;
    /// The same probability table without redrawing allocations.
    arma::mat allocation_probabilities(const SweepState& state) const;
    void update_mixing_proportions(SweepState& state, RngStream& rng) const;
    void update_cluster_params(SweepState& state, RngStream& rng) const;

    /// Canonical form (h, Q) of gamma_i's full conditional: mixture prior plus
    /// every Gaussian-form likelihood contribution (count slices excluded).
    std::pair<arma::vec, arma::mat> gamma_full_conditional(arma::uword i,
                                                           const SweepState& state) const;

    // -- evaluation ------------------------------------------------------------
    /// -2 x observed-data log-likelihood, conditional on the random effects.
    double deviance(const SweepState& state) const;
    double total_loglik(const SweepState& state) const;
    /// Joint log-posterior with augmentations marginalized out (likelihood +
    /// mixture prior on gamma + parameter priors). Used by permutation and
    /// relabeling checks.
    double joint_log_posterior(const SweepState& state) const;

    FeatureParams feature_params(const SweepState& state, arma::uword r) const;

    /// Canonical parameter names, in draw-vector order.
    const std::vector<std::string>& param_names() const { return param_names_; }
    arma::vec flatten(const SweepState& state) const;
    /// Rebuilds the structural part of a state from a draw vector; the gamma
    /// matrix is supplied separately and augmentations are left empty.
    SweepState unflatten(const arma::vec& draw, const arma::mat& gamma) const;

    bool has_poisson() const { return !poisson_dims_.empty(); }

private:
    const LongitudinalDataset* ds_;
    Priors priors_;
    arma::uword K_;
    MhOptions mh_;
    RandomEffectsLayout layout_;

    struct PartSpec {
        arma::uword feature;
        Part part;
        bool has_sigma2;
        bool logistic;  // PG-augmented part
        bool poisson;   // MH part
        bool has_random;
        arma::mat xtx;            // sum of x x' over active cells (gaussian-kind parts)
        arma::uword active_cells; // cells entering this part's likelihood
        // cross-products over active cells, fixed once the data is bound
        arma::vec xty;                  // sum x * response (gaussian-kind, y observed)
        double yty = 0.0;               // sum response^2
        std::vector<arma::mat> ztx;     // per individual: z' X over active cells
        std::vector<arma::mat> ztz;     // per individual: z' z over active cells
        std::vector<arma::vec> zty;     // per individual: z' response
    };
    std::vector<PartSpec> part_specs_;
    std::vector<bool> shrink_mask_;
    std::vector<arma::uword> poisson_dims_;  // gamma coordinates updated by MH
    std::vector<arma::uword> conj_dims_;
    std::vector<std::string> param_names_;

    void build_parts();
    void build_names();
    double poisson_loglik_beta(const PartSpec& ps, const arma::vec& beta,
                               const SweepState& state) const;
    double poisson_loglik_gamma_slice(arma::uword i, const SweepState& state,
                                      const arma::vec& gamma_i) const;
    void assemble_gamma_canonical(arma::uword i, const SweepState& state, arma::vec& h,
                                  arma::mat& Q) const;
};

}  // namespace zilcm
