#pragma once

#include <armadillo>
#include <map>
#include <string>
#include <vector>

#include "zilcm/engine.hpp"
#include "zilcm/math.hpp"

// Model choice and convergence diagnostics: penalized expected deviance,
// split-chain R-hat, effective sample sizes, label-switching correction,
// posterior membership, and cluster-recovery scoring.

namespace zilcm {

enum class PedEstimator { PairedChain, TwoPd };

std::string ped_estimator_name(PedEstimator e);
PedEstimator ped_estimator_from_name(const std::string& name);

struct PedReport {
    arma::uword k = 0;
    double dbar = 0.0;
    double popt = 0.0;
    double ped = 0.0;
    PedEstimator estimator = PedEstimator::PairedChain;
    // degenerate importance weights: median per-cell ESS below 10
    bool weight_warning = false;
    double min_cell_ess = kInf;
    double median_cell_ess = kInf;
};

/// Penalized expected deviance over the pooled chains.
///   two-pD:       popt = 2 (Dbar - D(theta_hat)), theta at pooled means.
///   paired-chain: popt = 2 sum_cells E_w[J_cell], with J the symmetrized
///     KL divergence between the cell's sampling distributions under draws
///     paired across chains and weights 1 / (f_A f_B) (importance re-weighting
///     toward the leave-one-out posterior). max_pairs caps pairs per chain
///     pair by striding.
PedReport compute_ped(const std::vector<ChainOutput>& chains, const GibbsModel& model,
                      PedEstimator estimator, arma::uword max_pairs = 250);

/// Split-chain potential scale reduction factor; each chain is halved before
/// the classic between/within computation. Returns NaN when every split is
/// constant.
double split_rhat(const std::vector<arma::vec>& chains);

/// Effective sample size, Geyer initial monotone sequence per chain, summed.
double effective_sample_size(const std::vector<arma::vec>& chains);

struct DiagnosticsReport {
    std::map<std::string, double> rhat;
    std::map<std::string, double> ess;
    std::map<std::string, double> acceptance;
    std::vector<std::string> flagged;  // parameters with degenerate variance
    double max_rhat = 0.0;
};

/// R-hat and ESS for every stored parameter (chains should be relabeled
/// first so mixture parameters are comparable across chains).
DiagnosticsReport compute_diagnostics(const std::vector<ChainOutput>& chains);

/// Per-draw relabeling: components permuted so the first coordinates of the
/// component means are ascending (ties by second coordinate, then index).
/// All component-indexed quantities are permuted consistently, in place.
void relabel(std::vector<ChainOutput>& chains, const GibbsModel& model);

struct MembershipSummary {
    arma::mat probabilities;  // m x K empirical frequencies
    arma::uvec assignment;    // row argmax, ties to the lower index
};

MembershipSummary posterior_membership(const std::vector<ChainOutput>& chains, arma::uword m,
                                       arma::uword K);

/// Chance-corrected agreement between two partitions; 1 iff identical up to
/// label permutation.
double adjusted_rand_index(const arma::uvec& a, const arma::uvec& b);

}  // namespace zilcm
