#pragma once

#include <armadillo>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zilcm/kernels.hpp"

// Multi-chain orchestration: initialization, burn-in, thinning, storage, and
// deterministic parallel execution. Chains never share mutable state; chain c
// draws from RngStream(seed, c), so serial and concurrent runs agree.

namespace zilcm {

struct McmcConfig {
    arma::uword chains = 3;
    arma::uword iterations = 6000;
    arma::uword burn_in = 1000;
    arma::uword thin = 5;
    std::uint64_t seed = 1;
    arma::uword K = 2;
    InitStrategy init = InitStrategy::KMeans;
    arma::uword threads = 0;           // 0 = hardware concurrency
    arma::uword checkpoint_every = 0;  // sweeps between snapshots; 0 = final only
    std::string checkpoint_dir;        // empty = no checkpoints
    bool store_random_effects = true;
    bool store_membership = true;
    UpdateFlags flags;  // blocks frozen by tests; all on in production

    arma::uword stored_draws() const { return (iterations - burn_in) / thin; }
    void validate() const;
};

struct ChainOutput {
    arma::uword chain_id = 0;
    arma::uword K = 0;
    std::string error;  // non-empty if the chain aborted

    std::vector<std::string> param_names;
    arma::mat draws;                     // stored_draws x n_params
    arma::vec deviance;                  // stored_draws
    arma::umat allocations;              // stored_draws x m (0-based labels)
    std::vector<arma::mat> membership;   // stored_draws of m x K
    std::vector<arma::mat> gamma_draws;  // stored_draws of m x q (optional)
    arma::mat gamma_mean;                // m x q posterior mean

    std::map<std::string, double> acceptance;     // per MH block
    std::map<std::string, double> block_seconds;  // cumulative per kernel block
    arma::vec sweep_seconds;                      // per-iteration wall clock
    // proposal scales at end of burn-in and at the end of the run; equal when
    // adaptation is frozen correctly
    std::map<std::string, double> mh_scale_post_burnin, mh_scale_final;

    bool ok() const { return error.empty(); }
    arma::uword param_index(const std::string& name) const;
    arma::vec column(const std::string& name) const;
};

ChainOutput run_chain(const GibbsModel& model, const McmcConfig& cfg, arma::uword chain_id);

/// Runs all chains (worker pool of cfg.threads); outputs ordered by chain id.
/// A failing chain carries its error message; surviving chains are returned.
std::vector<ChainOutput> run_chains(const GibbsModel& model, const McmcConfig& cfg);

// -- checkpointing -----------------------------------------------------------

struct Checkpoint {
    std::uint32_t version = 1;
    arma::uword iteration = 0;
    arma::uword chain_id = 0;
    SweepState state;
    RngStream::State rng_state{};
};

void save_checkpoint(const std::string& path, const Checkpoint& ck, const GibbsModel& model);
Checkpoint load_checkpoint(const std::string& path, const GibbsModel& model);

}  // namespace zilcm
