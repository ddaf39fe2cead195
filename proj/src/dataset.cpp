#include "zilcm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace zilcm {

std::string family_name(Family f) {
    switch (f) {
        case Family::Gaussian: return "gaussian";
        case Family::Tobit: return "tobit";
        case Family::TwoPart: return "twopart";
        case Family::Zip: return "zip";
    }
    return "?";
}

std::string part_name(Part p) {
    switch (p) {
        case Part::Main: return "main";
        case Part::Zero: return "zero";
        case Part::Positive: return "pos";
        case Part::Count: return "count";
    }
    return "?";
}

std::vector<Part> family_parts(const FeatureSpec& f) {
    switch (f.family) {
        case Family::Gaussian:
        case Family::Tobit: return {Part::Main};
        case Family::TwoPart: return {Part::Zero, Part::Positive};
        case Family::Zip: return {Part::Zero, Part::Count};
    }
    return {};
}

std::vector<Part> family_random_parts(const FeatureSpec& f) {
    switch (f.family) {
        case Family::Gaussian:
        case Family::Tobit: return {Part::Main};
        case Family::TwoPart: return {Part::Zero, Part::Positive};
        case Family::Zip:
            if (f.zip_variant == ZipVariant::Hall) return {Part::Count};
            return {Part::Zero, Part::Count};
    }
    return {};
}

bool part_has_sigma2(Family f, Part p) {
    return (f == Family::Gaussian && p == Part::Main) || (f == Family::Tobit && p == Part::Main) ||
           (f == Family::TwoPart && p == Part::Positive);
}

RandomEffectsLayout RandomEffectsLayout::build(const LongitudinalDataset& ds) {
    RandomEffectsLayout layout;
    arma::uword off = 0;
    for (arma::uword r = 0; r < ds.R(); ++r) {
        const arma::uword s = ds.m() > 0 ? ds.blocks[0][r].z.n_cols : 0;
        for (Part p : family_random_parts(ds.features[r])) {
            layout.slices.push_back({r, p, off, s});
            off += s;
        }
    }
    layout.q = off;
    return layout;
}

const RandomEffectsLayout::Slice& RandomEffectsLayout::find(arma::uword feature, Part part) const {
    for (const auto& s : slices)
        if (s.feature == feature && s.part == part) return s;
    throw std::logic_error("RandomEffectsLayout: no slice for feature/part");
}

bool RandomEffectsLayout::has(arma::uword feature, Part part) const {
    for (const auto& s : slices)
        if (s.feature == feature && s.part == part) return true;
    return false;
}

ValidationReport validate_dataset(const LongitudinalDataset& ds) {
    ValidationReport rep;
    rep.m = ds.m();
    rep.R = ds.R();
    rep.P = ds.P();

    if (ds.m() == 0) {
        rep.errors.push_back("dataset has no individuals");
        return rep;
    }
    if (ds.R() == 0) {
        rep.errors.push_back("dataset has no features");
        return rep;
    }

    // identifiability: fixed and random designs must not share columns
    std::set<std::string> xs(ds.covariate_names.begin(), ds.covariate_names.end());
    for (const auto& zn : ds.z_names) {
        if (xs.count(zn)) {
            rep.identifiable = false;
            rep.errors.push_back("identifiability violation: column '" + zn +
                                 "' appears in both the fixed and random designs");
        }
    }

    rep.zero_fraction.assign(ds.R(), 0.0);
    std::vector<arma::uword> counts(ds.R(), 0);
    for (arma::uword i = 0; i < ds.m(); ++i) {
        if (ds.blocks[i].size() != ds.R()) {
            rep.errors.push_back("individual " + ds.ids[i] + ": wrong number of feature blocks");
            continue;
        }
        for (arma::uword r = 0; r < ds.R(); ++r) {
            const auto& b = ds.blocks[i][r];
            const auto& spec = ds.features[r];
            if (b.y.n_elem == 0)
                rep.errors.push_back("individual " + ds.ids[i] + ", feature " + spec.name +
                                     ": empty response vector");
            if (b.X.n_rows != b.y.n_elem || b.z.n_rows != b.y.n_elem)
                rep.errors.push_back("individual " + ds.ids[i] + ", feature " + spec.name +
                                     ": design row count does not match response length");
            if (b.X.n_cols != ds.P())
                rep.errors.push_back("individual " + ds.ids[i] + ", feature " + spec.name +
                                     ": fixed design has wrong column count");
            for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                const double v = b.y(j);
                if (!std::isfinite(v)) {
                    rep.errors.push_back("individual " + ds.ids[i] + ", feature " + spec.name +
                                         ": non-finite response");
                    break;
                }
                if (spec.family == Family::Zip) {
                    if (v < 0.0 || std::floor(v) != v) {
                        rep.errors.push_back("individual " + ds.ids[i] + ", feature " + spec.name +
                                             ": count response must be a non-negative integer, got " +
                                             std::to_string(v));
                        break;
                    }
                } else if (spec.family == Family::Tobit || spec.family == Family::TwoPart) {
                    if (v < 0.0) {
                        rep.errors.push_back("individual " + ds.ids[i] + ", feature " + spec.name +
                                             ": response must be non-negative, got " +
                                             std::to_string(v));
                        break;
                    }
                }
                if (v == 0.0) rep.zero_fraction[r] += 1.0;
            }
            counts[r] += b.y.n_elem;
            rep.total_rows += b.y.n_elem;
        }
    }
    for (arma::uword r = 0; r < ds.R(); ++r)
        if (counts[r] > 0) rep.zero_fraction[r] /= static_cast<double>(counts[r]);
    return rep;
}

}  // namespace zilcm
