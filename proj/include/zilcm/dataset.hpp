#pragma once

#include <armadillo>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Domain types for the longitudinal latent-class model: per-individual,
// per-feature observation blocks, response families, and the layout that maps
// family parts onto contiguous slices of the joint random-effect vector.

namespace zilcm {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Family { Gaussian, Tobit, TwoPart, Zip };

enum class ZipVariant { Hall, YauLee };

/// Which linear predictor of a family a coefficient block belongs to.
/// Gaussian/Tobit have a single part ("main"); two-part and ZIP have two.
enum class Part { Main, Zero, Positive, Count };

std::string family_name(Family f);
std::string part_name(Part p);

struct FeatureSpec {
    std::string name;
    Family family = Family::Gaussian;
    ZipVariant zip_variant = ZipVariant::YauLee;
};

/// Parts with regression coefficients, in canonical order.
std::vector<Part> family_parts(const FeatureSpec& f);

/// Parts that carry a random-effect slice, in slice order.
std::vector<Part> family_random_parts(const FeatureSpec& f);

/// Parts with a Gaussian residual variance.
bool part_has_sigma2(Family f, Part p);

/// One individual's data for one feature.
struct FeatureBlock {
    arma::vec y;   // length n_ir
    arma::mat X;   // n_ir x P fixed design (shared across parts)
    arma::mat z;   // n_ir x s_r random design
};

/// Longitudinal dataset: m individuals, R features, shared covariate names.
struct LongitudinalDataset {
    std::vector<std::string> ids;               // length m, first-appearance order
    std::vector<std::string> covariate_names;   // length P
    std::vector<std::string> z_names;           // random-effect design columns
    std::vector<FeatureSpec> features;          // length R
    // blocks[i][r]
    std::vector<std::vector<FeatureBlock>> blocks;
    // wave index per (i, row); used only for reporting and trajectory tables
    std::vector<arma::ivec> waves;

    arma::uword m() const { return ids.size(); }
    arma::uword R() const { return features.size(); }
    arma::uword P() const { return covariate_names.size(); }
    arma::uword n_obs(arma::uword i, arma::uword r) const { return blocks[i][r].y.n_elem; }
};

/// Slice bookkeeping: maps (feature, part) to a contiguous range of the
/// stacked per-individual random-effect vector gamma_i.
struct RandomEffectsLayout {
    struct Slice {
        arma::uword feature;
        Part part;
        arma::uword offset;
        arma::uword dim;
    };
    std::vector<Slice> slices;
    arma::uword q = 0;

    static RandomEffectsLayout build(const LongitudinalDataset& ds);
    const Slice& find(arma::uword feature, Part part) const;
    bool has(arma::uword feature, Part part) const;
};

struct ValidationReport {
    arma::uword m = 0, R = 0, P = 0;
    arma::uword total_rows = 0;
    std::vector<double> zero_fraction;  // per feature
    bool identifiable = true;
    std::vector<std::string> errors;
    bool ok() const { return errors.empty(); }
};

/// Structural and identifiability checks; returns a report rather than
/// throwing so the CLI can print every problem at once.
ValidationReport validate_dataset(const LongitudinalDataset& ds);

}  // namespace zilcm
