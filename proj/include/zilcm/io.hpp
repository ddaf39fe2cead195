#pragma once

#include <optional>
#include <string>
#include <vector>

#include "zilcm/dataset.hpp"
#include "zilcm/diagnostics.hpp"
#include "zilcm/engine.hpp"
#include "zilcm/synth.hpp"

// Command-line surface: dataset and config ingestion, result serialization,
// and the five subcommands. All file writes are atomic (temp file + rename).

namespace zilcm {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitSampler = 4;
inline constexpr int kExitDiagnostics = 5;

struct DatasetSchema {
    std::vector<FeatureSpec> features;
    std::vector<std::string> z_names;
    std::vector<std::string> covariates;  // empty = every remaining column
    bool intercept = true;
};

/// Long-format CSV: header `id,wave,<columns>`; one row per (individual,
/// wave); strictly numeric cells, no missing values, no duplicate (id, wave).
/// Individuals keep first-appearance order; rows are sorted by wave within
/// individual. When schema.intercept is set, a constant "intercept" column is
/// prepended to the fixed design.
LongitudinalDataset parse_dataset_csv(const std::string& path, const DatasetSchema& schema);

void write_dataset_csv(const std::string& path, const LongitudinalDataset& ds);

struct RunConfig {
    std::string dataset_path;
    DatasetSchema schema;
    std::optional<arma::uword> k;       // single-K commands
    std::vector<arma::uword> k_range;   // select-k sweep
    Priors priors;
    McmcConfig mcmc;                    // K is filled per run
    PedEstimator estimator = PedEstimator::PairedChain;
    arma::uword ped_max_pairs = 250;
    std::string output_dir;
};

/// Strict parse: unknown keys are fatal (with a nearest-key suggestion);
/// environment variables ZILCM_SEED and ZILCM_OUT override seed and output
/// directory.
RunConfig parse_config(const std::string& path);

SimScenario parse_scenario(const std::string& path);

void atomic_write_file(const std::string& path, const std::string& content);
std::string format_double(double v);  // shortest round-trip representation

// -- subcommands (return process exit codes) ---------------------------------

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir);
int cmd_fit(const std::string& config_path, const std::string& out_dir);
int cmd_select_k(const std::string& config_path, const std::string& out_dir);
int cmd_diagnose(const std::string& fit_dir, bool strict);
int cmd_summarize(const std::string& fit_dir);

// -- pieces shared with tests -------------------------------------------------

struct FitResult {
    std::vector<ChainOutput> chains;  // relabeled
    DiagnosticsReport diagnostics;
    MembershipSummary membership;
    PedReport ped;         // configured estimator, with the documented fallback
    PedReport ped_paired;  // as-computed reports for both estimators
    PedReport ped_twopd;
    ValidationReport validation;
};

/// Parse + validate + run + relabel + diagnose for one K. config.mcmc.K is
/// overridden by `K`.
FitResult run_fit(const RunConfig& config, const LongitudinalDataset& ds, arma::uword K);

void write_fit_outputs(const std::string& dir, const RunConfig& config,
                       const LongitudinalDataset& ds, const FitResult& fit);

std::string summary_csv_string(const GibbsModel& model, const FitResult& fit);

}  // namespace zilcm
