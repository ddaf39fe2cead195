#include "zilcm/synth.hpp"

#include <cmath>

#include "zilcm/math.hpp"

namespace zilcm {

SimScenario SimScenario::reference_design(std::uint64_t seed) {
    SimScenario sc;
    sc.m = 300;
    sc.timepoints = 10;
    sc.K = 2;
    sc.weights = arma::vec{0.7, 0.3};
    sc.component_means = {arma::vec{0.0, 0.0}, arma::vec{1.0, 1.0}};
    sc.component_scales = {1.0, 1.5};
    sc.covariates = {{"x1", 5.0, 1.0}, {"x2", -5.0, 1.0}, {"x3", 0.0, 0.1}, {"x4", 0.0, 0.1}};
    sc.features = {
        {"y1", Family::Gaussian, ZipVariant::YauLee, arma::vec{1.5, -2.0, 0.05, -0.05},
         arma::vec{}, 1.0, 0.0},
        {"y2", Family::TwoPart, ZipVariant::YauLee, arma::vec{1.5, -2.0, 0.05, -0.05},
         arma::vec{}, 1.0, 0.3},
    };
    sc.seed = seed;
    return sc;
}

void SimScenario::validate() const {
    if (m == 0 || timepoints == 0) throw std::invalid_argument("SimScenario: empty design");
    if (weights.n_elem != K || component_means.size() != K || component_scales.size() != K)
        throw std::invalid_argument("SimScenario: mixture pieces must all have K entries");
    if (std::fabs(arma::accu(weights) - 1.0) > 1e-9)
        throw std::invalid_argument("SimScenario: weights must sum to 1");
    for (double s : component_scales)
        if (!(s > 0.0)) throw std::invalid_argument("SimScenario: covariance scale must be > 0");
    for (const auto& mu : component_means)
        if (mu.n_elem != features.size())
            throw std::invalid_argument(
                "SimScenario: component means need one entry per feature");
    for (const auto& f : features)
        if (f.beta.n_elem != covariates.size())
            throw std::invalid_argument("SimScenario: beta length must match covariate count");
}

std::pair<arma::mat, arma::uvec> generate_random_effects(const SimScenario& sc, RngStream& rng) {
    const arma::uword R = sc.features.size();
    arma::mat gamma(sc.m, R);
    arma::uvec labels(sc.m);
    for (arma::uword i = 0; i < sc.m; ++i) {
        double u = rng.uniform();
        arma::uword k = sc.K - 1;
        for (arma::uword c = 0; c < sc.K; ++c) {
            u -= sc.weights(c);
            if (u <= 0.0) {
                k = c;
                break;
            }
        }
        labels(i) = k;
        const double sd = std::sqrt(sc.component_scales[k]);
        for (arma::uword r = 0; r < R; ++r)
            gamma(i, r) = sc.component_means[k](r) + sd * rng.normal();
    }
    return {gamma, labels};
}

namespace {

arma::mat linear_surface(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                         const arma::vec& z, const arma::vec& gamma_col) {
    // eta(i, t) = x_i' beta + z_t * gamma_i
    arma::mat eta(sc.m, sc.timepoints);
    const arma::vec xb = X * f.beta;
    for (arma::uword i = 0; i < sc.m; ++i)
        for (arma::uword t = 0; t < sc.timepoints; ++t) eta(i, t) = xb(i) + z(t) * gamma_col(i);
    return eta;
}

}  // namespace

arma::mat generate_gaussian_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                                    const arma::vec& z, const arma::vec& gamma_col,
                                    RngStream& rng) {
    arma::mat y = linear_surface(sc, f, X, z, gamma_col);
    for (auto& v : y) v += f.sigma * rng.normal();
    return y;
}

arma::mat generate_twopart_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                                   const arma::vec& z, const arma::vec& gamma_col,
                                   RngStream& rng) {
    arma::mat y = linear_surface(sc, f, X, z, gamma_col);
    for (auto& v : y) {
        if (rng.uniform() < f.zero_prob)
            v = 0.0;
        else
            v += f.sigma * rng.normal();
    }
    return y;
}

arma::mat generate_tobit_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                                 const arma::vec& z, const arma::vec& gamma_col, RngStream& rng) {
    arma::mat y = linear_surface(sc, f, X, z, gamma_col);
    for (auto& v : y) {
        const double ystar = v + f.sigma * rng.normal();
        v = ystar > 0.0 ? ystar : 0.0;
    }
    return y;
}

arma::mat generate_zip_outcome(const SimScenario& sc, const SimFeature& f, const arma::mat& X,
                               const arma::vec& z, const arma::vec& gamma_col, RngStream& rng) {
    // structural zeros from beta_zero if given, else the flat zero_prob;
    // random effect enters the count intensity
    arma::mat eta = linear_surface(sc, f, X, z, gamma_col);
    arma::vec psi;
    if (f.beta_zero.n_elem > 0) psi = X * f.beta_zero;
    arma::mat y(sc.m, sc.timepoints);
    for (arma::uword i = 0; i < sc.m; ++i) {
        const double p = f.beta_zero.n_elem > 0 ? sigmoid(psi(i)) : f.zero_prob;
        for (arma::uword t = 0; t < sc.timepoints; ++t) {
            if (rng.uniform() < p) {
                y(i, t) = 0.0;
            } else {
                y(i, t) = static_cast<double>(rng.poisson(std::exp(eta(i, t))));
            }
        }
    }
    return y;
}

SimResult simulate_dataset(const SimScenario& sc) {
    sc.validate();
    RngStream rng(sc.seed, 0);
    const arma::uword R = sc.features.size();
    const arma::uword P = sc.covariates.size();

    // covariates: drawn per individual, constant across waves
    arma::mat X(sc.m, P);
    for (arma::uword i = 0; i < sc.m; ++i)
        for (arma::uword p = 0; p < P; ++p)
            X(i, p) = sc.covariates[p].mean + sc.covariates[p].sd * rng.normal();

    // scaled time index
    arma::vec z(sc.timepoints);
    for (arma::uword t = 0; t < sc.timepoints; ++t)
        z(t) = static_cast<double>(t + 1) / static_cast<double>(sc.timepoints);

    auto [gamma, labels] = generate_random_effects(sc, rng);

    std::vector<arma::mat> outcomes(R);
    for (arma::uword r = 0; r < R; ++r) {
        const auto& f = sc.features[r];
        switch (f.family) {
            case Family::Gaussian:
                outcomes[r] = generate_gaussian_outcome(sc, f, X, z, gamma.col(r), rng);
                break;
            case Family::TwoPart:
                outcomes[r] = generate_twopart_outcome(sc, f, X, z, gamma.col(r), rng);
                break;
            case Family::Tobit:
                outcomes[r] = generate_tobit_outcome(sc, f, X, z, gamma.col(r), rng);
                break;
            case Family::Zip:
                outcomes[r] = generate_zip_outcome(sc, f, X, z, gamma.col(r), rng);
                break;
        }
    }

    SimResult out;
    out.labels = labels;
    out.random_effects = gamma;
    auto& ds = out.dataset;
    for (const auto& c : sc.covariates) ds.covariate_names.push_back(c.name);
    ds.z_names = {"time_s"};
    for (const auto& f : sc.features)
        ds.features.push_back({f.name, f.family, f.zip_variant});

    ds.ids.reserve(sc.m);
    ds.blocks.resize(sc.m);
    ds.waves.resize(sc.m);
    for (arma::uword i = 0; i < sc.m; ++i) {
        ds.ids.push_back(std::to_string(i + 1));
        ds.waves[i].set_size(sc.timepoints);
        for (arma::uword t = 0; t < sc.timepoints; ++t)
            ds.waves[i](t) = static_cast<arma::sword>(t + 1);
        arma::mat Xi(sc.timepoints, P);
        for (arma::uword t = 0; t < sc.timepoints; ++t) Xi.row(t) = X.row(i);
        arma::mat zi(sc.timepoints, 1);
        zi.col(0) = z;
        ds.blocks[i].resize(R);
        for (arma::uword r = 0; r < R; ++r) {
            ds.blocks[i][r].X = Xi;
            ds.blocks[i][r].z = zi;
            ds.blocks[i][r].y = outcomes[r].row(i).t();
        }
    }
    return out;
}

void simulate_from_model(LongitudinalDataset& ds, const GibbsModel& model, const SweepState& state,
                         RngStream& rng) {
    const auto& layout = model.layout();
    for (arma::uword r = 0; r < ds.R(); ++r) {
        const auto& spec = ds.features[r];
        for (arma::uword i = 0; i < ds.m(); ++i) {
            auto& b = ds.blocks[i][r];
            const arma::vec gamma_i = state.gamma.row(i).t();
            auto slice_of = [&](Part p) -> arma::vec {
                const auto& sl = layout.find(r, p);
                return gamma_i.subvec(sl.offset, sl.offset + sl.dim - 1);
            };
            switch (spec.family) {
                case Family::Gaussian: {
                    const auto& p = state.parts[model.part_index(r, Part::Main)];
                    const arma::vec eta = b.X * p.beta + b.z * slice_of(Part::Main);
                    const double sd = std::sqrt(p.sigma2);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j)
                        b.y(j) = eta(j) + sd * rng.normal();
                    break;
                }
                case Family::Tobit: {
                    const auto& p = state.parts[model.part_index(r, Part::Main)];
                    const arma::vec eta = b.X * p.beta + b.z * slice_of(Part::Main);
                    const double sd = std::sqrt(p.sigma2);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                        const double ystar = eta(j) + sd * rng.normal();
                        b.y(j) = ystar > 0.0 ? ystar : 0.0;
                    }
                    break;
                }
                case Family::TwoPart: {
                    const auto& pz = state.parts[model.part_index(r, Part::Zero)];
                    const auto& pp = state.parts[model.part_index(r, Part::Positive)];
                    const arma::vec psi = b.X * pz.beta + b.z * slice_of(Part::Zero);
                    const arma::vec eta = b.X * pp.beta + b.z * slice_of(Part::Positive);
                    const double sd = std::sqrt(pp.sigma2);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                        if (rng.uniform() < sigmoid(psi(j)))
                            b.y(j) = 0.0;
                        else
                            b.y(j) = std::exp(eta(j) + sd * rng.normal());
                    }
                    break;
                }
                case Family::Zip: {
                    const auto& pz = state.parts[model.part_index(r, Part::Zero)];
                    const auto& pc = state.parts[model.part_index(r, Part::Count)];
                    arma::vec psi = b.X * pz.beta;
                    if (spec.zip_variant == ZipVariant::YauLee)
                        psi += b.z * slice_of(Part::Zero);
                    const arma::vec llam = b.X * pc.beta + b.z * slice_of(Part::Count);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                        if (rng.uniform() < sigmoid(psi(j)))
                            b.y(j) = 0.0;
                        else
                            b.y(j) = static_cast<double>(rng.poisson(std::exp(llam(j))));
                    }
                    break;
                }
            }
        }
    }
}

}  // namespace zilcm
