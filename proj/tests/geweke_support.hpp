#pragma once

// Joint-distribution ("getting it right") test harness: the marginal-
// conditional simulator draws (theta, y) from prior x likelihood directly;
// the successive-conditional simulator alternates one Gibbs sweep on theta | y
// with a redraw of y | theta. If every kernel leaves its full conditional
// invariant, both simulators target the same joint law, so the moments of any
// functional must agree.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "zilcm/kernels.hpp"
#include "zilcm/samplers.hpp"
#include "zilcm/synth.hpp"

namespace zilcm::testing {

inline Priors geweke_priors() {
    Priors p;
    p.mu_prior_var = 0.5;
    p.psi_df_extra = 6.0;   // keeps second moments of Psi finite
    p.psi_scale = 0.25;
    p.dirichlet_alpha = 1.0;
    p.sigma2_shape = 3.0;   // IG(3, 2): mean 1, finite variance
    p.sigma2_rate = 2.0;
    p.balasso_a = 6.0;      // tight shrinkage keeps predictors bounded
    p.balasso_b = 0.5;
    p.unshrunk_var = 0.25;
    return p;
}

inline SweepState draw_prior_state(const GibbsModel& model, RngStream& rng) {
    const Priors& pr = model.priors();
    const arma::uword q = model.layout().q;
    const arma::uword m = model.dataset().m();
    const arma::uword K = model.K();

    // structural init, then overwrite every block with a prior draw
    SweepState s = model.initialize(rng, InitStrategy::Random);

    s.mixture.pi = sample_dirichlet(arma::vec(K, arma::fill::value(pr.dirichlet_alpha)), rng);
    for (arma::uword k = 0; k < K; ++k) {
        s.mixture.mu[k] = sample_mvn(arma::vec(q, arma::fill::zeros),
                                     pr.mu_prior_var * arma::eye(q, q), rng);
        s.mixture.psi[k] = sample_inverse_wishart(static_cast<double>(q) + pr.psi_df_extra,
                                                  pr.psi_scale * arma::eye(q, q), rng);
    }
    for (arma::uword i = 0; i < m; ++i) {
        double u = rng.uniform();
        arma::uword k = K - 1;
        for (arma::uword c = 0; c < K; ++c) {
            u -= s.mixture.pi(c);
            if (u <= 0.0) {
                k = c;
                break;
            }
        }
        s.mixture.C(i) = k;
        s.gamma.row(i) = sample_mvn(s.mixture.mu[k], s.mixture.psi[k], rng).t();
    }
    const auto& mask = model.shrink_mask();
    for (auto& part : s.parts) {
        arma::uword si = 0;
        for (arma::uword j = 0; j < part.beta.n_elem; ++j) {
            if (mask[j]) {
                const double lam2 = rng.gamma(pr.balasso_a, pr.balasso_b);
                const double tau2 = rng.exponential() / (lam2 / 2.0);
                part.shrink.lambda2(si) = lam2;
                part.shrink.tau2(si) = tau2;
                part.beta(j) = std::sqrt(tau2) * rng.normal();
                ++si;
            } else {
                part.beta(j) = std::sqrt(pr.unshrunk_var) * rng.normal();
            }
        }
        if (part.has_sigma2) part.sigma2 = rng.inverse_gamma(pr.sigma2_shape, pr.sigma2_rate);
    }
    return s;
}

struct Functionals {
    std::vector<std::string> names;
    std::function<arma::vec(const GibbsModel&, const SweepState&, const LongitudinalDataset&)> eval;
};

inline Functionals standard_functionals(const GibbsModel& model) {
    Functionals f;
    const auto& ds = model.dataset();
    const arma::uword K = model.K();
    const arma::uword q = model.layout().q;
    for (arma::uword idx = 0; idx < model.n_parts(); ++idx) {
        const std::string tag = "p" + std::to_string(idx);
        for (arma::uword j = 0; j < ds.P(); ++j) {
            f.names.push_back("beta." + tag + "." + std::to_string(j));
            f.names.push_back("beta2." + tag + "." + std::to_string(j));
        }
        f.names.push_back("sigma2." + tag);
        f.names.push_back("tau2_mean." + tag);
        f.names.push_back("lambda2_mean." + tag);
    }
    // label-symmetric mixture summaries
    f.names.push_back("sum_pi_sq");
    f.names.push_back("mean_mu1");
    f.names.push_back("wsum_pi_mu1");
    f.names.push_back("mean_trPsi");
    f.names.push_back("gamma_mean1");
    f.names.push_back("gamma_mean1_sq");
    for (arma::uword r = 0; r < ds.R(); ++r) {
        f.names.push_back("ymean." + std::to_string(r));
        f.names.push_back("y2mean." + std::to_string(r));
        f.names.push_back("yzero." + std::to_string(r));
    }

    f.eval = [K, q](const GibbsModel& model2, const SweepState& s,
                    const LongitudinalDataset& ds2) {
        std::vector<double> v;
        for (const auto& part : s.parts) {
            for (arma::uword j = 0; j < part.beta.n_elem; ++j) {
                v.push_back(part.beta(j));
                v.push_back(part.beta(j) * part.beta(j));
            }
            v.push_back(part.has_sigma2 ? part.sigma2 : 0.0);
            v.push_back(part.shrink.tau2.n_elem ? arma::mean(part.shrink.tau2) : 0.0);
            v.push_back(part.shrink.lambda2.n_elem ? arma::mean(part.shrink.lambda2) : 0.0);
        }
        double sum_pi_sq = 0.0, mean_mu1 = 0.0, wsum = 0.0, tr = 0.0;
        for (arma::uword k = 0; k < K; ++k) {
            sum_pi_sq += s.mixture.pi(k) * s.mixture.pi(k);
            if (q > 0) {
                mean_mu1 += s.mixture.mu[k](0) / K;
                wsum += s.mixture.pi(k) * s.mixture.mu[k](0);
                tr += arma::trace(s.mixture.psi[k]) / K;
            }
        }
        v.push_back(sum_pi_sq);
        v.push_back(mean_mu1);
        v.push_back(wsum);
        v.push_back(tr);
        const double g1 = q > 0 ? arma::mean(s.gamma.col(0)) : 0.0;
        v.push_back(g1);
        v.push_back(q > 0 ? arma::mean(arma::square(s.gamma.col(0))) : 0.0);
        for (arma::uword r = 0; r < ds2.R(); ++r) {
            double sy = 0.0, sy2 = 0.0, z = 0.0, n = 0.0;
            for (arma::uword i = 0; i < ds2.m(); ++i) {
                const auto& y = ds2.blocks[i][r].y;
                sy += arma::accu(y);
                sy2 += arma::dot(y, y);
                z += arma::sum(y == 0.0);
                n += y.n_elem;
            }
            v.push_back(sy / n);
            v.push_back(sy2 / n);
            v.push_back(z / n);
        }
        (void)model2;
        return arma::vec(v);
    };
    return f;
}

struct GewekeResult {
    std::vector<std::string> names;
    arma::vec mean_mc, se_mc, mean_sc, se_sc;
    arma::vec zscores;
    double max_abs_z = 0.0;
    arma::uword failures(double z_threshold) const {
        arma::uword n = 0;
        for (const auto& z : zscores)
            if (std::fabs(z) > z_threshold) ++n;
        return n;
    }
};

inline arma::vec batch_se(const arma::mat& samples, arma::uword batches) {
    const arma::uword n = samples.n_rows, d = samples.n_cols;
    const arma::uword bs = n / batches;
    arma::mat bm(batches, d);
    for (arma::uword b = 0; b < batches; ++b)
        bm.row(b) = arma::mean(samples.rows(b * bs, (b + 1) * bs - 1), 0);
    arma::vec se(d);
    for (arma::uword j = 0; j < d; ++j)
        se(j) = arma::stddev(bm.col(j)) / std::sqrt(static_cast<double>(batches));
    return se;
}

/// Runs both simulators for n_iter draws each and compares all functionals.
inline GewekeResult run_geweke(LongitudinalDataset& ds, const Priors& priors, arma::uword K,
                               arma::uword n_iter, std::uint64_t seed) {
    GewekeResult out;
    MhOptions mh;
    mh.init_scale = 0.25;

    // marginal-conditional: iid draws from prior x data
    {
        GibbsModel model(ds, priors, K, mh);
        const Functionals f = standard_functionals(model);
        out.names = f.names;
        RngStream rng(seed, 101);
        arma::mat samples(n_iter, f.names.size());
        for (arma::uword t = 0; t < n_iter; ++t) {
            GibbsModel m2(ds, priors, K, mh);  // rebuild: active cells track y
            const SweepState st = draw_prior_state(m2, rng);
            simulate_from_model(ds, m2, st, rng);
            samples.row(t) = f.eval(m2, st, ds).t();
        }
        out.mean_mc = arma::mean(samples, 0).t();
        arma::vec sd = arma::stddev(samples, 0, 0).t();
        out.se_mc = sd / std::sqrt(static_cast<double>(n_iter));
    }

    // successive-conditional: Gibbs transition then data redraw
    {
        RngStream rng(seed, 202);
        GibbsModel model(ds, priors, K, mh);
        const Functionals f = standard_functionals(model);
        SweepState st = draw_prior_state(model, rng);
        simulate_from_model(ds, model, st, rng);
        arma::mat samples(n_iter, f.names.size());
        for (arma::uword t = 0; t < n_iter; ++t) {
            GibbsModel m2(ds, priors, K, mh);
            m2.sweep(st, rng, /*adapt=*/false);
            simulate_from_model(ds, m2, st, rng);
            samples.row(t) = f.eval(m2, st, ds).t();
        }
        out.mean_sc = arma::mean(samples, 0).t();
        out.se_sc = batch_se(samples, 50);
    }

    out.zscores.set_size(out.names.size());
    for (arma::uword j = 0; j < out.names.size(); ++j) {
        const double se = std::sqrt(out.se_mc(j) * out.se_mc(j) + out.se_sc(j) * out.se_sc(j));
        out.zscores(j) = se > 0.0 ? (out.mean_mc(j) - out.mean_sc(j)) / se : 0.0;
        out.max_abs_z = std::max(out.max_abs_z, std::fabs(out.zscores(j)));
    }
    return out;
}

}  // namespace zilcm::testing
