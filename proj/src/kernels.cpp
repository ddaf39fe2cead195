#include "zilcm/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "zilcm/math.hpp"
#include "zilcm/samplers.hpp"

namespace zilcm {

namespace {

constexpr double kBetaFloor = 1e-8;   // |beta_j| floor in the tau^2 update
constexpr double kTau2Min = 1e-12;
constexpr double kTau2Max = 1e12;

double log_mvgamma(double a, arma::uword q) {
    double s = 0.25 * static_cast<double>(q * (q - 1)) * std::log(M_PI);
    for (arma::uword j = 0; j < q; ++j) s += std::lgamma(a - 0.5 * static_cast<double>(j));
    return s;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double lap() {
        const auto t1 = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(t1 - t0).count();
        t0 = t1;
        return s;
    }
};

}  // namespace

GibbsModel::GibbsModel(const LongitudinalDataset& ds, Priors priors, arma::uword K, MhOptions mh)
    : ds_(&ds), priors_(priors), K_(K), mh_(mh), layout_(RandomEffectsLayout::build(ds)) {
    if (K_ < 1) throw std::invalid_argument("GibbsModel: K must be >= 1");
    build_parts();
    build_names();
}

void GibbsModel::build_parts() {
    const auto& ds = *ds_;
    shrink_mask_.assign(ds.P(), true);
    for (arma::uword j = 0; j < ds.P(); ++j)
        if (ds.covariate_names[j] == "intercept") shrink_mask_[j] = false;

    for (arma::uword r = 0; r < ds.R(); ++r) {
        const auto& spec = ds.features[r];
        for (Part p : family_parts(spec)) {
            PartSpec ps;
            ps.feature = r;
            ps.part = p;
            ps.has_sigma2 = part_has_sigma2(spec.family, p);
            ps.logistic = (spec.family == Family::TwoPart && p == Part::Zero) ||
                          (spec.family == Family::Zip && p == Part::Zero);
            ps.poisson = spec.family == Family::Zip && p == Part::Count;
            ps.has_random = layout_.has(r, p);
            ps.xtx.zeros(ds.P(), ds.P());
            ps.active_cells = 0;
            if (!ps.logistic && !ps.poisson) {
                // gaussian-kind parts: cache cross-products over active cells.
                // Tobit responses are latent, so only the design products apply.
                const bool latent = spec.family == Family::Tobit;
                const arma::uword s = ds.m() > 0 ? ds.blocks[0][r].z.n_cols : 0;
                ps.xty.zeros(ds.P());
                ps.ztx.resize(ds.m());
                ps.ztz.resize(ds.m());
                ps.zty.resize(ds.m());
                for (arma::uword i = 0; i < ds.m(); ++i) {
                    const auto& b = ds.blocks[i][r];
                    ps.ztx[i].zeros(s, ds.P());
                    ps.ztz[i].zeros(s, s);
                    ps.zty[i].zeros(s);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                        double resp = b.y(j);
                        if (spec.family == Family::TwoPart) {
                            if (b.y(j) <= 0.0) continue;
                            resp = std::log(b.y(j));
                        }
                        ps.xtx += b.X.row(j).t() * b.X.row(j);
                        ps.ztx[i] += b.z.row(j).t() * b.X.row(j);
                        ps.ztz[i] += b.z.row(j).t() * b.z.row(j);
                        if (!latent) {
                            ps.xty += resp * b.X.row(j).t();
                            ps.zty[i] += resp * b.z.row(j).t();
                            ps.yty += resp * resp;
                        }
                        ++ps.active_cells;
                    }
                }
            } else {
                for (arma::uword i = 0; i < ds.m(); ++i) ps.active_cells += ds.n_obs(i, r);
            }
            part_specs_.push_back(ps);
        }
    }

    // gamma coordinates owned by Poisson count slices (updated by MH)
    std::vector<bool> is_pois(layout_.q, false);
    for (const auto& s : layout_.slices) {
        if (ds.features[s.feature].family == Family::Zip && s.part == Part::Count)
            for (arma::uword d = 0; d < s.dim; ++d) is_pois[s.offset + d] = true;
    }
    for (arma::uword d = 0; d < layout_.q; ++d)
        (is_pois[d] ? poisson_dims_ : conj_dims_).push_back(d);
}

void GibbsModel::build_names() {
    const auto& ds = *ds_;
    for (const auto& ps : part_specs_) {
        const std::string base =
            "beta." + ds.features[ps.feature].name + "." + part_name(ps.part) + ".";
        for (arma::uword j = 0; j < ds.P(); ++j) param_names_.push_back(base + ds.covariate_names[j]);
    }
    for (const auto& ps : part_specs_) {
        if (!ps.has_sigma2) continue;
        param_names_.push_back("sigma2." + ds.features[ps.feature].name);
        param_names_.push_back("prec." + ds.features[ps.feature].name);
    }
    for (const auto& ps : part_specs_) {
        const std::string tag = ds.features[ps.feature].name + "." + part_name(ps.part) + ".";
        for (arma::uword j = 0; j < ds.P(); ++j)
            if (shrink_mask_[j]) param_names_.push_back("tau2." + tag + ds.covariate_names[j]);
        for (arma::uword j = 0; j < ds.P(); ++j)
            if (shrink_mask_[j]) param_names_.push_back("lambda2." + tag + ds.covariate_names[j]);
    }
    for (arma::uword k = 0; k < K_; ++k) param_names_.push_back("pi." + std::to_string(k + 1));
    for (arma::uword k = 0; k < K_; ++k)
        for (arma::uword j = 0; j < layout_.q; ++j)
            param_names_.push_back("mu." + std::to_string(k + 1) + "." + std::to_string(j + 1));
    for (arma::uword k = 0; k < K_; ++k)
        for (arma::uword a = 0; a < layout_.q; ++a)
            for (arma::uword b = a; b < layout_.q; ++b)
                param_names_.push_back("Psi." + std::to_string(k + 1) + "." + std::to_string(a + 1) +
                                       "." + std::to_string(b + 1));
}

arma::uword GibbsModel::part_index(arma::uword feature, Part part) const {
    for (arma::uword idx = 0; idx < part_specs_.size(); ++idx)
        if (part_specs_[idx].feature == feature && part_specs_[idx].part == part) return idx;
    throw std::logic_error("GibbsModel: no such part");
}

arma::vec GibbsModel::flatten(const SweepState& s) const {
    std::vector<double> v;
    v.reserve(param_names_.size());
    for (const auto& p : s.parts)
        for (arma::uword j = 0; j < p.beta.n_elem; ++j) v.push_back(p.beta(j));
    for (const auto& p : s.parts) {
        if (!p.has_sigma2) continue;
        v.push_back(p.sigma2);
        v.push_back(1.0 / p.sigma2);
    }
    for (const auto& p : s.parts) {
        for (arma::uword j = 0; j < p.shrink.tau2.n_elem; ++j) v.push_back(p.shrink.tau2(j));
        for (arma::uword j = 0; j < p.shrink.lambda2.n_elem; ++j) v.push_back(p.shrink.lambda2(j));
    }
    for (arma::uword k = 0; k < K_; ++k) v.push_back(s.mixture.pi(k));
    for (arma::uword k = 0; k < K_; ++k)
        for (arma::uword j = 0; j < layout_.q; ++j) v.push_back(s.mixture.mu[k](j));
    for (arma::uword k = 0; k < K_; ++k)
        for (arma::uword a = 0; a < layout_.q; ++a)
            for (arma::uword b = a; b < layout_.q; ++b) v.push_back(s.mixture.psi[k](a, b));
    return arma::vec(v);
}

SweepState GibbsModel::unflatten(const arma::vec& draw, const arma::mat& gamma) const {
    const auto& ds = *ds_;
    const arma::uword q = layout_.q;
    SweepState s;
    s.gamma = gamma;
    s.mixture.K = K_;
    s.mixture.pi.set_size(K_);
    s.mixture.C.zeros(ds.m());
    s.mixture.mu.assign(K_, arma::vec(q, arma::fill::zeros));
    s.mixture.psi.assign(K_, arma::eye(q, q));

    const arma::uword n_shrunk =
        static_cast<arma::uword>(std::count(shrink_mask_.begin(), shrink_mask_.end(), true));
    arma::uword pos = 0;
    for (const auto& psd : part_specs_) {
        PartState p;
        p.feature = psd.feature;
        p.part = psd.part;
        p.has_sigma2 = psd.has_sigma2;
        p.beta.set_size(ds.P());
        for (arma::uword j = 0; j < ds.P(); ++j) p.beta(j) = draw(pos++);
        p.shrink.tau2.set_size(n_shrunk);
        p.shrink.lambda2.set_size(n_shrunk);
        s.parts.push_back(std::move(p));
    }
    for (auto& p : s.parts) {
        if (!p.has_sigma2) continue;
        p.sigma2 = draw(pos++);
        ++pos;  // skip the derived precision entry
    }
    for (auto& p : s.parts) {
        for (arma::uword j = 0; j < p.shrink.tau2.n_elem; ++j) p.shrink.tau2(j) = draw(pos++);
        for (arma::uword j = 0; j < p.shrink.lambda2.n_elem; ++j) p.shrink.lambda2(j) = draw(pos++);
    }
    for (arma::uword k = 0; k < K_; ++k) s.mixture.pi(k) = draw(pos++);
    for (arma::uword k = 0; k < K_; ++k)
        for (arma::uword j = 0; j < q; ++j) s.mixture.mu[k](j) = draw(pos++);
    for (arma::uword k = 0; k < K_; ++k)
        for (arma::uword a = 0; a < q; ++a)
            for (arma::uword b = a; b < q; ++b) {
                s.mixture.psi[k](a, b) = draw(pos);
                s.mixture.psi[k](b, a) = draw(pos);
                ++pos;
            }
    if (pos != param_names_.size())
        throw std::logic_error("unflatten: draw length does not match parameter layout");
    return s;
}

// ---------------------------------------------------------------------------
// initialization

namespace {

// crude per-individual summaries for the k-means init: per feature mean,
// zero fraction, and slope against the first random-design column
arma::mat individual_summaries(const LongitudinalDataset& ds) {
    const arma::uword m = ds.m(), R = ds.R();
    arma::mat S(m, 3 * R, arma::fill::zeros);
    for (arma::uword i = 0; i < m; ++i) {
        for (arma::uword r = 0; r < R; ++r) {
            const auto& b = ds.blocks[i][r];
            const arma::uword n = b.y.n_elem;
            if (n == 0) continue;
            S(i, 3 * r) = arma::mean(b.y);
            S(i, 3 * r + 1) = static_cast<double>(arma::sum(b.y == 0.0)) / n;
            if (b.z.n_cols > 0 && n > 1) {
                const arma::vec z0 = b.z.col(0);
                const double vz = arma::var(z0);
                if (vz > 0.0)
                    S(i, 3 * r + 2) = arma::as_scalar(arma::cov(z0, b.y)) / vz;
            }
        }
    }
    // standardize columns
    for (arma::uword c = 0; c < S.n_cols; ++c) {
        const double mu = arma::mean(S.col(c));
        const double sd = arma::stddev(S.col(c));
        S.col(c) -= mu;
        if (sd > 0.0) S.col(c) /= sd;
    }
    return S;
}

arma::uvec kmeans_assign(const arma::mat& S, arma::uword K, RngStream& rng) {
    const arma::uword m = S.n_rows;
    arma::mat centers(K, S.n_cols);
    // k-means++ seeding
    centers.row(0) = S.row(static_cast<arma::uword>(rng.uniform() * m));
    arma::vec d2(m, arma::fill::value(kInf));
    for (arma::uword k = 1; k < K; ++k) {
        for (arma::uword i = 0; i < m; ++i) {
            const double d = arma::accu(arma::square(S.row(i) - centers.row(k - 1)));
            d2(i) = std::min(d2(i), d);
        }
        const double total = arma::accu(d2);
        double u = rng.uniform() * (total > 0.0 ? total : 1.0);
        arma::uword pick = m - 1;
        for (arma::uword i = 0; i < m; ++i) {
            u -= (total > 0.0 ? d2(i) : 1.0 / m);
            if (u <= 0.0) {
                pick = i;
                break;
            }
        }
        centers.row(k) = S.row(pick);
    }
    arma::uvec assign(m, arma::fill::zeros);
    for (int iter = 0; iter < 20; ++iter) {
        bool changed = false;
        for (arma::uword i = 0; i < m; ++i) {
            arma::uword best = 0;
            double bd = kInf;
            for (arma::uword k = 0; k < K; ++k) {
                const double d = arma::accu(arma::square(S.row(i) - centers.row(k)));
                if (d < bd) {
                    bd = d;
                    best = k;
                }
            }
            if (assign(i) != best) {
                assign(i) = best;
                changed = true;
            }
        }
        for (arma::uword k = 0; k < K; ++k) {
            const arma::uvec members = arma::find(assign == k);
            if (!members.is_empty()) centers.row(k) = arma::mean(S.rows(members), 0);
        }
        if (!changed) break;
    }
    return assign;
}

}  // namespace

SweepState GibbsModel::initialize(RngStream& rng, InitStrategy strategy) const {
    const auto& ds = *ds_;
    if (K_ > ds.m()) throw std::invalid_argument("initialize: K exceeds number of individuals");

    SweepState s;
    const arma::uword q = layout_.q;
    s.gamma.zeros(ds.m(), q);

    s.mixture.K = K_;
    s.mixture.pi = arma::vec(K_, arma::fill::value(1.0 / K_));
    s.mixture.mu.assign(K_, arma::vec(q, arma::fill::zeros));
    const double psi_mean_div = priors_.psi_df_extra - 1.0;
    const double psi_init = psi_mean_div > 0.0 ? priors_.psi_scale / psi_mean_div : priors_.psi_scale;
    s.mixture.psi.assign(K_, psi_init * arma::eye(q, q));

    if (strategy == InitStrategy::KMeans && K_ > 1) {
        s.mixture.C = kmeans_assign(individual_summaries(ds), K_, rng);
    } else {
        s.mixture.C.set_size(ds.m());
        for (arma::uword i = 0; i < ds.m(); ++i)
            s.mixture.C(i) = std::min<arma::uword>(K_ - 1, static_cast<arma::uword>(rng.uniform() * K_));
    }

    const double sigma2_init =
        priors_.sigma2_shape > 1.0 ? priors_.sigma2_rate / (priors_.sigma2_shape - 1.0) : 1.0;
    const double lambda2_init = priors_.balasso_a / priors_.balasso_b;
    const arma::uword n_shrunk =
        static_cast<arma::uword>(std::count(shrink_mask_.begin(), shrink_mask_.end(), true));

    for (const auto& psd : part_specs_) {
        PartState p;
        p.feature = psd.feature;
        p.part = psd.part;
        p.has_sigma2 = psd.has_sigma2;
        p.sigma2 = sigma2_init;
        p.beta.set_size(ds.P());
        for (arma::uword j = 0; j < ds.P(); ++j) p.beta(j) = 0.1 * rng.normal();
        p.shrink.tau2 = arma::vec(n_shrunk, arma::fill::value(2.0 / lambda2_init));
        p.shrink.lambda2 = arma::vec(n_shrunk, arma::fill::value(lambda2_init));
        p.mh_log_scale = std::log(mh_.init_scale);
        s.parts.push_back(std::move(p));
    }

    s.ystar.resize(ds.R());
    s.omega.resize(ds.R());
    s.zeros.resize(ds.R());
    for (arma::uword r = 0; r < ds.R(); ++r) {
        const auto fam = ds.features[r].family;
        if (fam == Family::Tobit) s.ystar[r].resize(ds.m());
        if (fam == Family::TwoPart || fam == Family::Zip) s.omega[r].resize(ds.m());
        if (fam == Family::Zip) s.zeros[r].resize(ds.m());
    }

    s.gamma_mh_log_scale = arma::vec(ds.m(), arma::fill::value(std::log(mh_.init_scale)));
    s.gamma_mh_accepted.zeros(ds.m());
    s.gamma_mh_proposed.zeros(ds.m());
    s.gamma_mh_batch_accepted.zeros(ds.m());
    s.gamma_mh_batch_count.zeros(ds.m());
    s.gamma_mh_batches.zeros(ds.m());

    // make the latent augmentations consistent with the data
    augment_tobit(s, rng);
    augment_zip_indicators(s, rng);
    augment_logistic_pg(s, rng);
    return s;
}

// ---------------------------------------------------------------------------
// augmentation kernels

void GibbsModel::augment_tobit(SweepState& s, RngStream& rng) const {
    const auto& ds = *ds_;
    for (arma::uword r = 0; r < ds.R(); ++r) {
        if (ds.features[r].family != Family::Tobit) continue;
        const auto& p = s.parts[part_index(r, Part::Main)];
        const auto& sl = layout_.find(r, Part::Main);
        const double sigma = std::sqrt(p.sigma2);
        for (arma::uword i = 0; i < ds.m(); ++i) {
            const auto& b = ds.blocks[i][r];
            arma::vec& ys = s.ystar[r][i];
            ys.set_size(b.y.n_elem);
            for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                if (b.y(j) > 0.0) {
                    ys(j) = b.y(j);
                    continue;
                }
                double eta = arma::dot(b.X.row(j), p.beta);
                for (arma::uword a = 0; a < sl.dim; ++a)
                    eta += b.z(j, a) * s.gamma(i, sl.offset + a);
                ys(j) = sample_truncated_normal(eta, sigma, -kInf, 0.0, rng);
            }
        }
    }
}

void GibbsModel::augment_zip_indicators(SweepState& s, RngStream& rng) const {
    const auto& ds = *ds_;
    for (arma::uword r = 0; r < ds.R(); ++r) {
        const auto& spec = ds.features[r];
        if (spec.family != Family::Zip) continue;
        const auto& pz = s.parts[part_index(r, Part::Zero)];
        const auto& pc = s.parts[part_index(r, Part::Count)];
        const auto& slc = layout_.find(r, Part::Count);
        const bool yaulee = spec.zip_variant == ZipVariant::YauLee;
        const RandomEffectsLayout::Slice* slz = yaulee ? &layout_.find(r, Part::Zero) : nullptr;
        for (arma::uword i = 0; i < ds.m(); ++i) {
            const auto& b = ds.blocks[i][r];
            arma::vec& w = s.zeros[r][i];
            w.set_size(b.y.n_elem);
            for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                if (b.y(j) > 0.0) {
                    w(j) = 0.0;
                    continue;
                }
                double psi = arma::dot(b.X.row(j), pz.beta);
                if (slz)
                    for (arma::uword a = 0; a < slz->dim; ++a)
                        psi += b.z(j, a) * s.gamma(i, slz->offset + a);
                double llam = arma::dot(b.X.row(j), pc.beta);
                for (arma::uword a = 0; a < slc.dim; ++a)
                    llam += b.z(j, a) * s.gamma(i, slc.offset + a);
                const double lp = log_sigmoid(psi);
                const double l0 = log_sigmoid(-psi) - std::exp(llam);
                const double pr = std::exp(lp - log_add_exp(lp, l0));
                w(j) = rng.bernoulli(pr) ? 1.0 : 0.0;
            }
        }
    }
}

void GibbsModel::augment_logistic_pg(SweepState& s, RngStream& rng) const {
    const auto& ds = *ds_;
    for (arma::uword r = 0; r < ds.R(); ++r) {
        const auto& spec = ds.features[r];
        if (spec.family != Family::TwoPart && spec.family != Family::Zip) continue;
        const auto& pz = s.parts[part_index(r, Part::Zero)];
        const bool has_re = layout_.has(r, Part::Zero);
        const RandomEffectsLayout::Slice* sl = has_re ? &layout_.find(r, Part::Zero) : nullptr;
        for (arma::uword i = 0; i < ds.m(); ++i) {
            const auto& b = ds.blocks[i][r];
            arma::vec& om = s.omega[r][i];
            om.set_size(b.y.n_elem);
            for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                double psi = arma::dot(b.X.row(j), pz.beta);
                if (sl)
                    for (arma::uword a = 0; a < sl->dim; ++a)
                        psi += b.z(j, a) * s.gamma(i, sl->offset + a);
                om(j) = sample_polya_gamma(1.0, psi, rng);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// random effects

namespace {

// rank-one accumulation of a weighted logistic cell into (h, Q) slice views
inline void add_pg_cell(const arma::mat& z, arma::uword j, double kappa, double omega, double xb,
                        arma::uword off, arma::uword dim, arma::vec& h, arma::mat& Q) {
    for (arma::uword a = 0; a < dim; ++a) {
        const double za = z(j, a);
        h(off + a) += za * (kappa - omega * xb);
        for (arma::uword b2 = 0; b2 <= a; ++b2) {
            const double v = omega * za * z(j, b2);
            Q(off + a, off + b2) += v;
            if (b2 != a) Q(off + b2, off + a) += v;
        }
    }
}

}  // namespace

void GibbsModel::assemble_gamma_canonical(arma::uword i, const SweepState& s, arma::vec& h,
                                          arma::mat& Q) const {
    const auto& ds = *ds_;
    for (arma::uword idx = 0; idx < part_specs_.size(); ++idx) {
        const auto& psd = part_specs_[idx];
        if (!psd.has_random || psd.poisson) continue;
        const arma::uword r = psd.feature;
        const auto& spec = ds.features[r];
        const auto& b = ds.blocks[i][r];
        if (b.y.n_elem == 0) continue;
        const auto& sl = layout_.find(r, psd.part);
        if (sl.dim == 0) continue;
        const auto& p = s.parts[idx];
        const arma::uword o = sl.offset, d = sl.dim;

        if (!psd.logistic) {
            // gaussian-kind: cached cross-products; Tobit substitutes y*
            Q.submat(o, o, o + d - 1, o + d - 1) += psd.ztz[i] / p.sigma2;
            arma::vec zr;
            if (spec.family == Family::Tobit) {
                zr = b.z.t() * s.ystar[r][i] - psd.ztx[i] * p.beta;
            } else {
                zr = psd.zty[i] - psd.ztx[i] * p.beta;
            }
            h.subvec(o, o + d - 1) += zr / p.sigma2;
        } else {
            const arma::vec& om = s.omega[r][i];
            const bool twopart = spec.family == Family::TwoPart;
            if (!twopart && spec.zip_variant != ZipVariant::YauLee) continue;
            const arma::vec* w = twopart ? nullptr : &s.zeros[r][i];
            for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                const double u = twopart ? (b.y(j) == 0.0 ? 1.0 : 0.0) : (*w)(j);
                const double xb = arma::dot(b.X.row(j), p.beta);
                add_pg_cell(b.z, j, u - 0.5, om(j), xb, o, d, h, Q);
            }
        }
    }
}

double GibbsModel::poisson_loglik_gamma_slice(arma::uword i, const SweepState& s,
                                              const arma::vec& gamma_i) const {
    const auto& ds = *ds_;
    double ll = 0.0;
    for (arma::uword r = 0; r < ds.R(); ++r) {
        if (ds.features[r].family != Family::Zip) continue;
        const auto& pc = s.parts[part_index(r, Part::Count)];
        const auto& sl = layout_.find(r, Part::Count);
        const auto& b = ds.blocks[i][r];
        if (b.y.n_elem == 0) continue;
        const arma::vec& w = s.zeros[r][i];
        const arma::vec eta = b.X * pc.beta + b.z * gamma_i.subvec(sl.offset, sl.offset + sl.dim - 1);
        for (arma::uword j = 0; j < b.y.n_elem; ++j) {
            if (w(j) != 0.0) continue;
            if (eta(j) > 50.0) return -kInf;  // guard against overflow in exp
            ll += b.y(j) * eta(j) - std::exp(eta(j));
        }
    }
    return ll;
}

std::pair<arma::vec, arma::mat> GibbsModel::gamma_full_conditional(arma::uword i,
                                                                   const SweepState& s) const {
    const arma::uword k = s.mixture.C(i);
    arma::mat Q;
    if (!arma::inv_sympd(Q, s.mixture.psi[k]))
        throw SamplerError("gamma_full_conditional: Psi not SPD");
    arma::vec h = Q * s.mixture.mu[k];
    assemble_gamma_canonical(i, s, h, Q);
    return {h, Q};
}

namespace {

// in-place lower Cholesky for the small dense q x q case; false if not SPD
inline bool small_chol(const arma::mat& Q, arma::mat& L) {
    const arma::uword q = Q.n_rows;
    for (arma::uword a = 0; a < q; ++a) {
        for (arma::uword b = 0; b <= a; ++b) {
            double acc = Q(a, b);
            for (arma::uword c = 0; c < b; ++c) acc -= L(a, c) * L(b, c);
            if (a == b) {
                if (!(acc > 0.0)) return false;
                L(a, a) = std::sqrt(acc);
            } else {
                L(a, b) = acc / L(b, b);
            }
        }
        for (arma::uword b = a + 1; b < q; ++b) L(a, b) = 0.0;
    }
    return true;
}

// draw from N_c(h, Q) given L = chol(Q, lower), writing into out; uses ws as scratch
inline void small_canonical_draw(const arma::mat& L, const arma::vec& h, arma::vec& ws,
                                 arma::vec& out, RngStream& rng) {
    const arma::uword q = h.n_elem;
    // forward: L w = h
    for (arma::uword a = 0; a < q; ++a) {
        double acc = h(a);
        for (arma::uword c = 0; c < a; ++c) acc -= L(a, c) * ws(c);
        ws(a) = acc / L(a, a);
    }
    // backward: L' mean = w, then add L'^-1 z
    for (arma::uword a = q; a-- > 0;) {
        double acc = ws(a) + rng.normal();  // z folded into the same solve
        for (arma::uword c = a + 1; c < q; ++c) acc -= L(c, a) * out(c);
        out(a) = acc / L(a, a);
    }
}

}  // namespace

void GibbsModel::update_random_effects(SweepState& s, RngStream& rng, bool adapt) const {
    const auto& ds = *ds_;
    const arma::uword q = layout_.q;
    if (q == 0) return;

    std::vector<arma::mat> psi_inv(K_);
    std::vector<arma::vec> psi_inv_mu(K_);
    for (arma::uword k = 0; k < K_; ++k) {
        if (!arma::inv_sympd(psi_inv[k], s.mixture.psi[k]))
            throw SamplerError("update_random_effects: Psi_" + std::to_string(k + 1) +
                               " is not SPD");
        psi_inv_mu[k] = psi_inv[k] * s.mixture.mu[k];
    }

    const arma::uvec conj(conj_dims_);
    const arma::uvec pois(poisson_dims_);

    // buffers reused across individuals
    arma::vec h(q), ws(q), gamma_i(q);
    arma::mat Q(q, q), L(q, q);

    for (arma::uword i = 0; i < ds.m(); ++i) {
        const arma::uword k = s.mixture.C(i);
        h = psi_inv_mu[k];
        Q = psi_inv[k];
        assemble_gamma_canonical(i, s, h, Q);

        for (arma::uword a = 0; a < q; ++a) gamma_i(a) = s.gamma(i, a);
        if (pois.is_empty()) {
            if (!small_chol(Q, L)) {
                std::ostringstream os;
                os << "update_random_effects: conditional precision for individual " << ds.ids[i]
                   << " is not SPD; Q =\n"
                   << Q;
                throw SamplerError(os.str());
            }
            small_canonical_draw(L, h, ws, gamma_i, rng);
        } else {
            // conjugate block given the Poisson-owned coordinates
            if (!conj.is_empty()) {
                const arma::vec hA = h.elem(conj) - Q.submat(conj, pois) * gamma_i.elem(pois);
                try {
                    gamma_i.elem(conj) = sample_mvn_canonical(hA, Q.submat(conj, conj), rng);
                } catch (const std::runtime_error&) {
                    std::ostringstream os;
                    os << "update_random_effects: conditional precision for individual "
                       << ds.ids[i] << " is not SPD; Q =\n" << Q;
                    throw SamplerError(os.str());
                }
            }
            // random-walk Metropolis on the count-part coordinates
            const arma::uword nb = pois.n_elem;
            arma::vec cur = gamma_i.elem(pois);
            auto log_target = [&](const arma::vec& gb) {
                arma::vec full = gamma_i;
                full.elem(pois) = gb;
                double lp = arma::dot(h.elem(pois), gb) -
                            0.5 * arma::as_scalar(gb.t() * Q.submat(pois, pois) * gb);
                if (!conj.is_empty())
                    lp -= arma::as_scalar(gb.t() * Q.submat(pois, conj) * gamma_i.elem(conj));
                return lp + poisson_loglik_gamma_slice(i, s, full);
            };
            const double lt_cur = log_target(cur);
            if (!std::isfinite(lt_cur))
                throw SamplerError("update_random_effects: non-finite Poisson log-target at "
                                   "current state for individual " + ds.ids[i]);
            const double scale = std::exp(s.gamma_mh_log_scale(i));
            arma::vec prop = cur;
            for (arma::uword d = 0; d < nb; ++d) prop(d) += scale * rng.normal();
            const double lt_prop = log_target(prop);
            const double u = rng.uniform();
            bool accepted = std::log(u) < lt_prop - lt_cur;
            if (accepted) cur = prop;
            gamma_i.elem(pois) = cur;

            ++s.gamma_mh_proposed(i);
            if (accepted) ++s.gamma_mh_accepted(i);
            if (adapt) {
                ++s.gamma_mh_batch_count(i);
                if (accepted) ++s.gamma_mh_batch_accepted(i);
                if (s.gamma_mh_batch_count(i) >= mh_.batch) {
                    ++s.gamma_mh_batches(i);
                    const double rate = static_cast<double>(s.gamma_mh_batch_accepted(i)) /
                                        static_cast<double>(s.gamma_mh_batch_count(i));
                    const double target = nb == 1 ? mh_.target_scalar : mh_.target_block;
                    const double delta =
                        std::min(0.1, 1.0 / std::sqrt(static_cast<double>(s.gamma_mh_batches(i))));
                    s.gamma_mh_log_scale(i) += rate > target ? delta : -delta;
                    s.gamma_mh_batch_count(i) = 0;
                    s.gamma_mh_batch_accepted(i) = 0;
                }
            }
        }
        s.gamma.row(i) = gamma_i.t();
    }
}

// ---------------------------------------------------------------------------
// fixed effects

double balasso_draw_tau2(double beta_j, double lambda2, RngStream& rng) {
    const double bj = std::max(std::fabs(beta_j), kBetaFloor);
    const double inv_tau2 = sample_inverse_gaussian(std::sqrt(lambda2) / bj, lambda2, rng);
    return std::clamp(1.0 / inv_tau2, kTau2Min, kTau2Max);
}

double balasso_draw_lambda2(double tau2, const Priors& priors, RngStream& rng) {
    return rng.gamma(priors.balasso_a + 1.0, priors.balasso_b + 0.5 * tau2);
}

namespace {

arma::vec shrunk_prior_precision(const PartState& p, const std::vector<bool>& mask,
                                 double unshrunk_var) {
    arma::vec d(p.beta.n_elem);
    arma::uword si = 0;
    for (arma::uword j = 0; j < p.beta.n_elem; ++j) {
        if (mask[j])
            d(j) = 1.0 / p.shrink.tau2(si++);
        else
            d(j) = 1.0 / unshrunk_var;
    }
    return d;
}

void update_shrinkage_for_part(PartState& p, const std::vector<bool>& mask, const Priors& priors,
                               RngStream& rng) {
    arma::uword si = 0;
    for (arma::uword j = 0; j < p.beta.n_elem; ++j) {
        if (!mask[j]) continue;
        p.shrink.tau2(si) = balasso_draw_tau2(p.beta(j), p.shrink.lambda2(si), rng);
        p.shrink.lambda2(si) = balasso_draw_lambda2(p.shrink.tau2(si), priors, rng);
        ++si;
    }
}

}  // namespace

void GibbsModel::update_fixed_effects_balasso(arma::uword part_idx, SweepState& s, RngStream& rng,
                                              bool update_shrinkage) const {
    const auto& ds = *ds_;
    const auto& psd = part_specs_[part_idx];
    auto& p = s.parts[part_idx];
    const arma::uword P = ds.P();
    if (P == 0) return;
    const arma::uword r = psd.feature;
    const auto& spec = ds.features[r];

    arma::mat A(P, P, arma::fill::zeros);
    arma::vec h(P, arma::fill::zeros);

    if (!psd.logistic && !psd.poisson) {
        // gaussian-kind: precision X'X / sigma^2; the linear term reduces to
        // cached cross-products except for the latent Tobit response
        A = psd.xtx / p.sigma2;
        if (spec.family == Family::Tobit) {
            for (arma::uword i = 0; i < ds.m(); ++i) {
                const auto& b = ds.blocks[i][r];
                const arma::vec& ys = s.ystar[r][i];
                for (arma::uword j = 0; j < b.y.n_elem; ++j)
                    for (arma::uword c = 0; c < P; ++c) h(c) += b.X(j, c) * ys(j);
            }
        } else {
            h = psd.xty;
        }
        if (psd.has_random) {
            const auto& sl = layout_.find(r, psd.part);
            if (sl.dim > 0)
                for (arma::uword i = 0; i < ds.m(); ++i)
                    h -= psd.ztx[i].t() *
                         s.gamma.row(i).subvec(sl.offset, sl.offset + sl.dim - 1).t();
        }
        h /= p.sigma2;
    } else if (psd.logistic) {
        const bool twopart = spec.family == Family::TwoPart;
        const RandomEffectsLayout::Slice* sl =
            psd.has_random ? &layout_.find(r, Part::Zero) : nullptr;
        for (arma::uword i = 0; i < ds.m(); ++i) {
            const auto& b = ds.blocks[i][r];
            if (b.y.n_elem == 0) continue;
            const arma::vec& om = s.omega[r][i];
            const arma::vec* w = twopart ? nullptr : &s.zeros[r][i];
            for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                const double kap = (twopart ? (b.y(j) == 0.0 ? 1.0 : 0.0) : (*w)(j)) - 0.5;
                double off = 0.0;
                if (sl && sl->dim > 0)
                    for (arma::uword a = 0; a < sl->dim; ++a)
                        off += b.z(j, a) * s.gamma(i, sl->offset + a);
                const double wj = om(j);
                for (arma::uword c = 0; c < P; ++c) {
                    const double xc = b.X(j, c);
                    h(c) += xc * (kap - wj * off);
                    for (arma::uword c2 = 0; c2 <= c; ++c2) A(c, c2) += wj * xc * b.X(j, c2);
                }
            }
        }
        A = arma::symmatl(A);
    } else {
        throw std::logic_error("update_fixed_effects_balasso: Poisson part uses Metropolis");
    }

    A.diag() += shrunk_prior_precision(p, shrink_mask_, priors_.unshrunk_var);
    p.beta = sample_mvn_canonical(h, A, rng);

    if (update_shrinkage) update_shrinkage_for_part(p, shrink_mask_, priors_, rng);
}

double GibbsModel::poisson_loglik_beta(const PartSpec& psd, const arma::vec& beta,
                                       const SweepState& s) const {
    const auto& ds = *ds_;
    const arma::uword r = psd.feature;
    const auto& sl = layout_.find(r, Part::Count);
    double ll = 0.0;
    for (arma::uword i = 0; i < ds.m(); ++i) {
        const auto& b = ds.blocks[i][r];
        if (b.y.n_elem == 0) continue;
        const arma::vec& w = s.zeros[r][i];
        arma::vec eta = b.X * beta;
        if (sl.dim > 0)
            eta += b.z * s.gamma.row(i).subvec(sl.offset, sl.offset + sl.dim - 1).t();
        for (arma::uword j = 0; j < b.y.n_elem; ++j) {
            if (w(j) != 0.0) continue;
            if (eta(j) > 50.0) return -kInf;
            ll += b.y(j) * eta(j) - std::exp(eta(j));
        }
    }
    return ll;
}

void GibbsModel::update_poisson_coefficients(arma::uword part_idx, SweepState& s, RngStream& rng,
                                             bool adapt) const {
    const auto& psd = part_specs_[part_idx];
    if (!psd.poisson)
        throw std::logic_error("update_poisson_coefficients: not a Poisson part");
    auto& p = s.parts[part_idx];
    const arma::uword P = p.beta.n_elem;
    if (P == 0) return;

    const arma::vec prior_prec = shrunk_prior_precision(p, shrink_mask_, priors_.unshrunk_var);
    auto log_target = [&](const arma::vec& beta) {
        const double prior = -0.5 * arma::dot(prior_prec, arma::square(beta));
        return prior + poisson_loglik_beta(psd, beta, s);
    };

    const double lt_cur = log_target(p.beta);
    if (!std::isfinite(lt_cur))
        throw SamplerError("update_poisson_coefficients: non-finite log-posterior at current "
                           "state (feature " + ds_->features[psd.feature].name + ")");
    const double scale = std::exp(p.mh_log_scale);
    arma::vec prop = p.beta;
    for (arma::uword j = 0; j < P; ++j) prop(j) += scale * rng.normal();
    const double lt_prop = log_target(prop);
    const bool accepted = std::log(rng.uniform()) < lt_prop - lt_cur;
    if (accepted) p.beta = prop;

    ++p.mh_proposed;
    if (accepted) ++p.mh_accepted;
    if (adapt) {
        ++p.mh_batch_count;
        if (accepted) ++p.mh_batch_accepted;
        if (p.mh_batch_count >= mh_.batch) {
            ++p.mh_batches;
            const double rate =
                static_cast<double>(p.mh_batch_accepted) / static_cast<double>(p.mh_batch_count);
            const double target = P == 1 ? mh_.target_scalar : mh_.target_block;
            const double delta =
                std::min(0.1, 1.0 / std::sqrt(static_cast<double>(p.mh_batches)));
            p.mh_log_scale += rate > target ? delta : -delta;
            p.mh_batch_count = 0;
            p.mh_batch_accepted = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// variances, allocations, mixture

void GibbsModel::update_sigma2(SweepState& s, RngStream& rng) const {
    const auto& ds = *ds_;
    for (arma::uword idx = 0; idx < part_specs_.size(); ++idx) {
        const auto& psd = part_specs_[idx];
        if (!psd.has_sigma2) continue;
        auto& p = s.parts[idx];
        const arma::uword r = psd.feature;
        const auto& spec = ds.features[r];
        const RandomEffectsLayout::Slice* sl =
            psd.has_random ? &layout_.find(r, psd.part) : nullptr;
        double ssr = 0.0;
        if (spec.family == Family::Tobit) {
            // latent response: per-cell residual pass
            for (arma::uword i = 0; i < ds.m(); ++i) {
                const auto& b = ds.blocks[i][r];
                const arma::vec& ys = s.ystar[r][i];
                for (arma::uword j = 0; j < b.y.n_elem; ++j) {
                    double e = ys(j) - arma::dot(b.X.row(j), p.beta);
                    if (sl && sl->dim > 0)
                        for (arma::uword a = 0; a < sl->dim; ++a)
                            e -= b.z(j, a) * s.gamma(i, sl->offset + a);
                    ssr += e * e;
                }
            }
        } else {
            // SSR from cached cross-products:
            // y'y - 2 b'X'y + b'X'Xb + sum_i [-2 g'z'y + 2 b'X'z g + g'z'z g]
            ssr = psd.yty - 2.0 * arma::dot(p.beta, psd.xty) +
                  arma::dot(p.beta, psd.xtx * p.beta);
            if (sl && sl->dim > 0) {
                for (arma::uword i = 0; i < ds.m(); ++i) {
                    const arma::vec g =
                        s.gamma.row(i).subvec(sl->offset, sl->offset + sl->dim - 1).t();
                    ssr += -2.0 * arma::dot(g, psd.zty[i]) +
                           2.0 * arma::dot(psd.ztx[i] * p.beta, g) +
                           arma::dot(g, psd.ztz[i] * g);
                }
            }
            ssr = std::max(ssr, 0.0);  // guard tiny negative rounding
        }
        p.sigma2 = rng.inverse_gamma(priors_.sigma2_shape + 0.5 * psd.active_cells,
                                     priors_.sigma2_rate + 0.5 * ssr);
    }
}

namespace {

// m x K table of log pi_k + log N(gamma_i; mu_k, Psi_k)
arma::mat allocation_log_weights(const MixtureState& mix, const arma::mat& gamma, arma::uword q) {
    const arma::uword m = gamma.n_rows, K = mix.K;
    arma::mat lw(m, K);
    std::vector<arma::mat> chol_psi(K);
    arma::vec logdet(K, arma::fill::zeros);
    if (q > 0) {
        for (arma::uword k = 0; k < K; ++k) {
            if (!arma::chol(chol_psi[k], mix.psi[k], "lower"))
                throw SamplerError("allocations: Psi_" + std::to_string(k + 1) + " is not SPD");
            logdet(k) = 2.0 * arma::accu(arma::log(chol_psi[k].diag()));
        }
    }
    for (arma::uword i = 0; i < m; ++i) {
        for (arma::uword k = 0; k < K; ++k) {
            double quad = 0.0;
            if (q > 0) {
                const arma::vec d = gamma.row(i).t() - mix.mu[k];
                const arma::vec v = arma::solve(arma::trimatl(chol_psi[k]), d);
                quad = arma::dot(v, v);
            }
            lw(i, k) = std::log(mix.pi(k)) -
                       0.5 * (static_cast<double>(q) * kLogTwoPi + logdet(k) + quad);
        }
    }
    return lw;
}

arma::mat normalize_log_rows(const arma::mat& lw) {
    arma::mat table(lw.n_rows, lw.n_cols);
    for (arma::uword i = 0; i < lw.n_rows; ++i) {
        const double mx = lw.row(i).max();
        arma::rowvec pr = arma::exp(lw.row(i) - mx);
        table.row(i) = pr / arma::accu(pr);
    }
    return table;
}

}  // namespace

arma::mat GibbsModel::allocation_probabilities(const SweepState& s) const {
    return normalize_log_rows(allocation_log_weights(s.mixture, s.gamma, layout_.q));
}

arma::mat GibbsModel::update_allocations(SweepState& s, RngStream& rng) const {
    const arma::uword q = layout_.q, m = ds_->m();
    arma::mat table(m, K_);

    std::vector<arma::mat> chol_psi(K_);
    arma::vec logdet(K_, arma::fill::zeros), logpi(K_);
    for (arma::uword k = 0; k < K_; ++k) {
        if (q > 0) {
            if (!arma::chol(chol_psi[k], s.mixture.psi[k], "lower"))
                throw SamplerError("allocations: Psi_" + std::to_string(k + 1) + " is not SPD");
            logdet(k) = 2.0 * arma::accu(arma::log(chol_psi[k].diag()));
        }
        logpi(k) = std::log(s.mixture.pi(k));
    }

    arma::vec v(q), lw(K_), pr(K_);
    for (arma::uword i = 0; i < m; ++i) {
        for (arma::uword k = 0; k < K_; ++k) {
            double quad = 0.0;
            if (q > 0) {
                // forward substitution L v = gamma_i - mu_k
                const arma::mat& L = chol_psi[k];
                const arma::vec& mu = s.mixture.mu[k];
                for (arma::uword a = 0; a < q; ++a) {
                    double acc = s.gamma(i, a) - mu(a);
                    for (arma::uword b2 = 0; b2 < a; ++b2) acc -= L(a, b2) * v(b2);
                    v(a) = acc / L(a, a);
                    quad += v(a) * v(a);
                }
            }
            lw(k) = logpi(k) - 0.5 * (static_cast<double>(q) * kLogTwoPi + logdet(k) + quad);
        }
        const double mx = lw.max();
        double total = 0.0;
        for (arma::uword k = 0; k < K_; ++k) {
            pr(k) = std::exp(lw(k) - mx);
            total += pr(k);
        }
        double u = rng.uniform() * total;
        arma::uword pick = K_ - 1;
        for (arma::uword k = 0; k + 1 < K_; ++k) {
            u -= pr(k);
            if (u <= 0.0) {
                pick = k;
                break;
            }
        }
        s.mixture.C(i) = pick;
        table.row(i) = pr.t() / total;
    }
    return table;
}

void GibbsModel::update_mixing_proportions(SweepState& s, RngStream& rng) const {
    arma::vec alpha(K_, arma::fill::value(priors_.dirichlet_alpha));
    for (arma::uword i = 0; i < s.mixture.C.n_elem; ++i) alpha(s.mixture.C(i)) += 1.0;
    s.mixture.pi = sample_dirichlet(alpha, rng);
}

void GibbsModel::update_cluster_params(SweepState& s, RngStream& rng) const {
    const arma::uword q = layout_.q;
    if (q == 0) return;
    const double nu0 = static_cast<double>(q) + priors_.psi_df_extra;
    const arma::mat S0 = priors_.psi_scale * arma::eye(q, q);

    for (arma::uword k = 0; k < K_; ++k) {
        const arma::uvec members = arma::find(s.mixture.C == k);
        if (members.is_empty()) {
            // no-data conditional is the prior
            s.mixture.mu[k] = sample_mvn(arma::vec(q, arma::fill::zeros),
                                         priors_.mu_prior_var * arma::eye(q, q), rng);
            s.mixture.psi[k] = sample_inverse_wishart(nu0, S0, rng);
            continue;
        }
        const arma::mat G = s.gamma.rows(members);
        const double mk = static_cast<double>(members.n_elem);

        arma::mat psi_inv;
        if (!arma::inv_sympd(psi_inv, s.mixture.psi[k]))
            throw SamplerError("update_cluster_params: Psi_" + std::to_string(k + 1) +
                               " is not SPD");
        arma::mat Qmu = arma::eye(q, q) / priors_.mu_prior_var + mk * psi_inv;
        arma::vec hmu = psi_inv * arma::sum(G, 0).t();
        s.mixture.mu[k] = sample_mvn_canonical(hmu, Qmu, rng);

        arma::mat scatter(q, q, arma::fill::zeros);
        for (arma::uword idx = 0; idx < members.n_elem; ++idx) {
            const arma::vec d = G.row(idx).t() - s.mixture.mu[k];
            scatter += d * d.t();
        }
        s.mixture.psi[k] = sample_inverse_wishart(nu0 + mk, S0 + scatter, rng);
    }
}

// ---------------------------------------------------------------------------
// sweep

std::map<std::string, double> GibbsModel::sweep(SweepState& s, RngStream& rng, bool adapt,
                                                const UpdateFlags& flags) const {
    std::map<std::string, double> timing;
    Timer timer;
    try {
        if (flags.augmentations) {
            augment_tobit(s, rng);
            augment_zip_indicators(s, rng);
            augment_logistic_pg(s, rng);
            timing["augmentations"] = timer.lap();
        }
        if (flags.random_effects) {
            update_random_effects(s, rng, adapt);
            timing["random_effects"] = timer.lap();
        }
        if (flags.fixed_effects) {
            for (arma::uword idx = 0; idx < part_specs_.size(); ++idx) {
                if (part_specs_[idx].poisson) {
                    update_poisson_coefficients(idx, s, rng, adapt);
                    if (flags.shrinkage)
                        update_shrinkage_for_part(s.parts[idx], shrink_mask_, priors_, rng);
                } else {
                    update_fixed_effects_balasso(idx, s, rng, flags.shrinkage);
                }
            }
            timing["fixed_effects"] = timer.lap();
        }
        if (flags.sigma2) {
            update_sigma2(s, rng);
            timing["sigma2"] = timer.lap();
        }
        if (flags.allocations) {
            update_allocations(s, rng);
            timing["allocations"] = timer.lap();
        }
        if (flags.mixing) {
            update_mixing_proportions(s, rng);
            timing["mixing"] = timer.lap();
        }
        if (flags.cluster_params) {
            update_cluster_params(s, rng);
            timing["cluster_params"] = timer.lap();
        }
    } catch (const SamplerError&) {
        throw;
    } catch (const std::exception& e) {
        throw SamplerError(std::string("sweep failed: ") + e.what());
    }
    return timing;
}

// ---------------------------------------------------------------------------
// evaluation

FeatureParams GibbsModel::feature_params(const SweepState& s, arma::uword r) const {
    FeatureParams fp;
    for (Part p : family_parts(ds_->features[r])) {
        const auto& ps = s.parts[part_index(r, p)];
        fp.beta.push_back(ps.beta);
        fp.sigma2.push_back(ps.sigma2);
    }
    return fp;
}

double GibbsModel::total_loglik(const SweepState& s) const {
    const auto& ds = *ds_;
    double ll = 0.0;
    for (arma::uword r = 0; r < ds.R(); ++r) {
        const FeatureParams fp = feature_params(s, r);
        for (arma::uword i = 0; i < ds.m(); ++i)
            ll += feature_loglik(ds.features[r], fp, ds.blocks[i][r], s.gamma.row(i).t(), layout_, r);
    }
    return ll;
}

double GibbsModel::deviance(const SweepState& s) const {
    const double d = -2.0 * total_loglik(s);
    if (!std::isfinite(d)) throw SamplerError("deviance: non-finite likelihood");
    return d;
}

double GibbsModel::joint_log_posterior(const SweepState& s) const {
    const auto& ds = *ds_;
    const arma::uword q = layout_.q;
    double lp = total_loglik(s);

    // mixture prior on random effects and allocations
    if (q > 0) {
        std::vector<arma::mat> chol_psi(K_);
        arma::vec logdet(K_);
        for (arma::uword k = 0; k < K_; ++k) {
            if (!arma::chol(chol_psi[k], s.mixture.psi[k], "lower"))
                throw SamplerError("joint_log_posterior: Psi not SPD");
            logdet(k) = 2.0 * arma::accu(arma::log(chol_psi[k].diag()));
        }
        for (arma::uword i = 0; i < ds.m(); ++i) {
            const arma::uword k = s.mixture.C(i);
            const arma::vec d = s.gamma.row(i).t() - s.mixture.mu[k];
            const arma::vec v = arma::solve(arma::trimatl(chol_psi[k]), d);
            lp += -0.5 * (static_cast<double>(q) * kLogTwoPi + logdet(k) + arma::dot(v, v));
        }
    }
    for (arma::uword i = 0; i < ds.m(); ++i) lp += std::log(s.mixture.pi(s.mixture.C(i)));

    // Dirichlet prior on pi
    const double a = priors_.dirichlet_alpha;
    lp += std::lgamma(a * K_) - K_ * std::lgamma(a);
    for (arma::uword k = 0; k < K_; ++k) lp += (a - 1.0) * std::log(s.mixture.pi(k));

    // component parameter priors
    if (q > 0) {
        const double nu0 = static_cast<double>(q) + priors_.psi_df_extra;
        const arma::mat S0 = priors_.psi_scale * arma::eye(q, q);
        const double s0_logdet = static_cast<double>(q) * std::log(priors_.psi_scale);
        for (arma::uword k = 0; k < K_; ++k) {
            lp += -0.5 * (static_cast<double>(q) * std::log(2.0 * M_PI * priors_.mu_prior_var) +
                          arma::dot(s.mixture.mu[k], s.mixture.mu[k]) / priors_.mu_prior_var);
            double ld;
            double sign;
            arma::log_det(ld, sign, s.mixture.psi[k]);
            arma::mat psi_inv = arma::inv_sympd(s.mixture.psi[k]);
            lp += 0.5 * nu0 * s0_logdet - 0.5 * nu0 * static_cast<double>(q) * std::log(2.0) -
                  log_mvgamma(0.5 * nu0, q) - 0.5 * (nu0 + q + 1.0) * ld -
                  0.5 * arma::trace(S0 * psi_inv);
        }
    }

    // coefficient priors (BaLasso hierarchy) and residual variances
    for (const auto& p : s.parts) {
        arma::uword si = 0;
        for (arma::uword j = 0; j < p.beta.n_elem; ++j) {
            const double var = shrink_mask_[j] ? p.shrink.tau2(si) : priors_.unshrunk_var;
            lp += -0.5 * (std::log(2.0 * M_PI * var) + p.beta(j) * p.beta(j) / var);
            if (shrink_mask_[j]) {
                const double tau2 = p.shrink.tau2(si);
                const double lam2 = p.shrink.lambda2(si);
                lp += std::log(lam2 / 2.0) - lam2 * tau2 / 2.0;  // Exp(lam2/2)
                lp += priors_.balasso_a * std::log(priors_.balasso_b) -
                      std::lgamma(priors_.balasso_a) +
                      (priors_.balasso_a - 1.0) * std::log(lam2) - priors_.balasso_b * lam2;
                ++si;
            }
        }
        if (p.has_sigma2) {
            const double a0 = priors_.sigma2_shape, b0 = priors_.sigma2_rate;
            lp += a0 * std::log(b0) - std::lgamma(a0) - (a0 + 1.0) * std::log(p.sigma2) -
                  b0 / p.sigma2;
        }
    }
    return lp;
}

}  // namespace zilcm
