#include "zilcm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zilcm/likelihood.hpp"
#include "zilcm/math.hpp"

namespace zilcm {

std::string ped_estimator_name(PedEstimator e) {
    return e == PedEstimator::PairedChain ? "paired-chain" : "two-pD";
}

PedEstimator ped_estimator_from_name(const std::string& name) {
    if (name == "paired-chain") return PedEstimator::PairedChain;
    if (name == "two-pD" || name == "two-pd") return PedEstimator::TwoPd;
    throw std::invalid_argument("unknown PED estimator '" + name + "'");
}

// ---------------------------------------------------------------------------
// per-cell sampling distributions and their divergences

namespace {

struct CellParams {
    Family family;
    double a = 0.0, b = 0.0, c = 0.0;
    // gaussian/tobit: a = eta,      b = sigma2
    // twopart:        a = psi_zero, b = eta_pos, c = sigma2
    // zip:            a = psi_zero, b = log_lambda
};

struct CellIndex {
    std::vector<double> y;
    std::vector<arma::uword> feature;
};

CellIndex build_cell_index(const LongitudinalDataset& ds) {
    CellIndex ci;
    for (arma::uword i = 0; i < ds.m(); ++i)
        for (arma::uword r = 0; r < ds.R(); ++r)
            for (arma::uword j = 0; j < ds.n_obs(i, r); ++j) {
                ci.y.push_back(ds.blocks[i][r].y(j));
                ci.feature.push_back(r);
            }
    return ci;
}

// cell parameters for one stored draw
std::vector<CellParams> cell_params_for_draw(const GibbsModel& model, const ChainOutput& chain,
                                             arma::uword t) {
    const auto& ds = model.dataset();
    const auto& layout = model.layout();
    const SweepState st = model.unflatten(chain.draws.row(t).t(), chain.gamma_draws[t]);
    std::vector<CellParams> out;
    for (arma::uword i = 0; i < ds.m(); ++i) {
        const arma::vec gamma_i = st.gamma.row(i).t();
        for (arma::uword r = 0; r < ds.R(); ++r) {
            const auto& spec = ds.features[r];
            const auto& b = ds.blocks[i][r];
            auto slice_of = [&](Part p) -> arma::vec {
                const auto& sl = layout.find(r, p);
                return gamma_i.subvec(sl.offset, sl.offset + sl.dim - 1);
            };
            switch (spec.family) {
                case Family::Gaussian:
                case Family::Tobit: {
                    const auto& p = st.parts[model.part_index(r, Part::Main)];
                    const arma::vec eta = b.X * p.beta + b.z * slice_of(Part::Main);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j)
                        out.push_back({spec.family, eta(j), p.sigma2, 0.0});
                    break;
                }
                case Family::TwoPart: {
                    const auto& pz = st.parts[model.part_index(r, Part::Zero)];
                    const auto& pp = st.parts[model.part_index(r, Part::Positive)];
                    const arma::vec psi = b.X * pz.beta + b.z * slice_of(Part::Zero);
                    const arma::vec eta = b.X * pp.beta + b.z * slice_of(Part::Positive);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j)
                        out.push_back({spec.family, psi(j), eta(j), pp.sigma2});
                    break;
                }
                case Family::Zip: {
                    const auto& pz = st.parts[model.part_index(r, Part::Zero)];
                    const auto& pc = st.parts[model.part_index(r, Part::Count)];
                    arma::vec psi = b.X * pz.beta;
                    if (spec.zip_variant == ZipVariant::YauLee)
                        psi += b.z * slice_of(Part::Zero);
                    const arma::vec llam = b.X * pc.beta + b.z * slice_of(Part::Count);
                    for (arma::uword j = 0; j < b.y.n_elem; ++j)
                        out.push_back({spec.family, psi(j), llam(j), 0.0});
                    break;
                }
            }
        }
    }
    return out;
}

double cell_loglik(double y, const CellParams& cp) {
    switch (cp.family) {
        case Family::Gaussian: return loglik_gaussian_cell(y, cp.a, cp.b);
        case Family::Tobit: return loglik_tobit_cell(y, cp.a, cp.b);
        case Family::TwoPart: return loglik_twopart_cell(y, cp.a, cp.b, cp.c);
        case Family::Zip: return loglik_zip_cell(y, cp.a, cp.b);
    }
    return 0.0;
}

double kl_normal(double m1, double v1, double m2, double v2) {
    const double d = m1 - m2;
    return 0.5 * (std::log(v2 / v1) + (v1 + d * d) / v2 - 1.0);
}

// KL of the mixed point-mass + truncated-density Tobit observation law
double kl_tobit_one_sided(const CellParams& f, const CellParams& g) {
    const double s1 = std::sqrt(f.b), s2 = std::sqrt(g.b);
    const double P1 = norm_cdf(-f.a / s1);
    double kl = 0.0;
    if (P1 > 0.0) kl += P1 * (log_norm_cdf(-f.a / s1) - log_norm_cdf(-g.a / s2));
    const double M0 = 1.0 - P1;  // P(Y1 > 0)
    if (M0 > 1e-300) {
        // truncated moments of N(f.a, f.b) above 0
        const double alpha = -f.a / s1;
        const double haz = norm_pdf(alpha) / M0;
        const double tmean = f.a + s1 * haz;
        const double tvar = f.b * (1.0 + alpha * haz - haz * haz);
        auto m2_about = [&](double c) {
            const double d = tmean - c;
            return M0 * (tvar + d * d);
        };
        kl += M0 * std::log(s2 / s1) + m2_about(g.a) / (2.0 * g.b) - m2_about(f.a) / (2.0 * f.b);
    }
    return std::max(kl, 0.0);
}

double kl_twopart(const CellParams& f, const CellParams& g) {
    const double p1 = sigmoid(f.a);
    double kl = 0.0;
    if (p1 > 0.0) kl += p1 * (log_sigmoid(f.a) - log_sigmoid(g.a));
    const double q1 = 1.0 - p1;
    if (q1 > 0.0)
        kl += q1 * (log_sigmoid(-f.a) - log_sigmoid(-g.a) + kl_normal(f.b, f.c, g.b, g.c));
    return std::max(kl, 0.0);
}

double kl_zip(const CellParams& f, const CellParams& g) {
    const double lam = std::max(std::exp(f.b), std::exp(g.b));
    const arma::uword cap = std::min<arma::uword>(
        600, std::max<arma::uword>(50, static_cast<arma::uword>(lam + 12.0 * std::sqrt(lam))));
    double kl = 0.0;
    for (arma::uword y = 0; y <= cap; ++y) {
        const double lf = loglik_zip_cell(static_cast<double>(y), f.a, f.b);
        const double lg = loglik_zip_cell(static_cast<double>(y), g.a, g.b);
        kl += std::exp(lf) * (lf - lg);
    }
    return std::max(kl, 0.0);
}

double symmetric_divergence(const CellParams& f, const CellParams& g) {
    switch (f.family) {
        case Family::Gaussian:
            return 0.5 * (kl_normal(f.a, f.b, g.a, g.b) + kl_normal(g.a, g.b, f.a, f.b));
        case Family::Tobit:
            return 0.5 * (kl_tobit_one_sided(f, g) + kl_tobit_one_sided(g, f));
        case Family::TwoPart:
            return 0.5 * (kl_twopart(f, g) + kl_twopart(g, f));
        case Family::Zip:
            return 0.5 * (kl_zip(f, g) + kl_zip(g, f));
    }
    return 0.0;
}

struct LogSumExp {
    double mx = -kInf;
    double sum = 0.0;
    void add(double lx) {
        if (lx == -kInf) return;
        if (lx <= mx) {
            sum += std::exp(lx - mx);
        } else {
            sum = sum * std::exp(mx - lx) + 1.0;
            mx = lx;
        }
    }
    double value() const { return sum > 0.0 ? mx + std::log(sum) : -kInf; }
};

}  // namespace

PedReport compute_ped(const std::vector<ChainOutput>& chains, const GibbsModel& model,
                      PedEstimator estimator, arma::uword max_pairs) {
    std::vector<const ChainOutput*> ok;
    for (const auto& c : chains)
        if (c.ok()) ok.push_back(&c);
    if (ok.empty()) throw std::invalid_argument("compute_ped: no surviving chains");
    if (estimator == PedEstimator::PairedChain && ok.size() < 2)
        throw std::invalid_argument("compute_ped: the paired-chain estimator needs >= 2 chains");

    PedReport rep;
    rep.k = ok.front()->K;
    rep.estimator = estimator;

    double dsum = 0.0;
    arma::uword dn = 0;
    for (const auto* c : ok) {
        dsum += arma::accu(c->deviance);
        dn += c->deviance.n_elem;
    }
    rep.dbar = dsum / static_cast<double>(dn);

    if (estimator == PedEstimator::TwoPd) {
        // plug-in deviance at the pooled posterior mean
        arma::vec mean_draw(ok.front()->draws.n_cols, arma::fill::zeros);
        arma::mat mean_gamma = ok.front()->gamma_mean;
        mean_gamma.zeros();
        for (const auto* c : ok) {
            mean_draw += arma::mean(c->draws, 0).t();
            mean_gamma += c->gamma_mean;
        }
        mean_draw /= static_cast<double>(ok.size());
        mean_gamma /= static_cast<double>(ok.size());
        const SweepState st = model.unflatten(mean_draw, mean_gamma);
        rep.popt = 2.0 * (rep.dbar - model.deviance(st));
        rep.ped = rep.dbar + rep.popt;
        rep.min_cell_ess = kNaN;
        return rep;
    }

    for (const auto* c : ok)
        if (c->gamma_draws.empty())
            throw std::invalid_argument(
                "compute_ped: paired-chain estimator needs stored random-effect draws "
                "(store_random_effects)");

    const CellIndex ci = build_cell_index(model.dataset());
    const arma::uword n_cells = ci.y.size();
    std::vector<LogSumExp> lse_w(n_cells), lse_wj(n_cells), lse_w2(n_cells);

    const arma::uword T = ok.front()->deviance.n_elem;
    const arma::uword stride = std::max<arma::uword>(1, T / std::max<arma::uword>(1, max_pairs));

    for (arma::uword a = 0; a < ok.size(); ++a) {
        for (arma::uword b = a + 1; b < ok.size(); ++b) {
            for (arma::uword t = 0; t < T; t += stride) {
                const auto cpA = cell_params_for_draw(model, *ok[a], t);
                const auto cpB = cell_params_for_draw(model, *ok[b], t);
                for (arma::uword o = 0; o < n_cells; ++o) {
                    const double llA = cell_loglik(ci.y[o], cpA[o]);
                    const double llB = cell_loglik(ci.y[o], cpB[o]);
                    const double lw = -llA - llB;
                    const double J = symmetric_divergence(cpA[o], cpB[o]);
                    lse_w[o].add(lw);
                    lse_w2[o].add(2.0 * lw);
                    if (J > 0.0) lse_wj[o].add(lw + std::log(J));
                }
            }
        }
    }

    double popt = 0.0;
    std::vector<double> cell_ess;
    cell_ess.reserve(n_cells);
    for (arma::uword o = 0; o < n_cells; ++o) {
        const double lw = lse_w[o].value();
        if (lw == -kInf) continue;
        const double lwj = lse_wj[o].value();
        popt += lwj == -kInf ? 0.0 : 2.0 * std::exp(lwj - lw);
        cell_ess.push_back(std::exp(2.0 * lw - lse_w2[o].value()));
    }
    rep.popt = popt;
    rep.ped = rep.dbar + popt;
    if (!cell_ess.empty()) {
        std::sort(cell_ess.begin(), cell_ess.end());
        rep.min_cell_ess = cell_ess.front();
        rep.median_cell_ess = cell_ess[cell_ess.size() / 2];
    }
    rep.weight_warning = rep.median_cell_ess < 10.0;
    return rep;
}

// ---------------------------------------------------------------------------
// convergence diagnostics

double split_rhat(const std::vector<arma::vec>& chains) {
    std::vector<arma::vec> splits;
    for (const auto& c : chains) {
        if (c.n_elem < 4) throw std::invalid_argument("split_rhat: chains too short");
        const arma::uword half = c.n_elem / 2;
        splits.push_back(c.subvec(0, half - 1));
        splits.push_back(c.subvec(half, 2 * half - 1));
    }
    const arma::uword s = splits.size();
    const arma::uword n = splits.front().n_elem;

    arma::vec means(s), vars(s);
    for (arma::uword j = 0; j < s; ++j) {
        means(j) = arma::mean(splits[j]);
        vars(j) = arma::var(splits[j]);  // divisor n-1
    }
    const double W = arma::mean(vars);
    const double B_over_n = arma::var(means);
    if (W == 0.0 && B_over_n == 0.0) return kNaN;
    if (W == 0.0) return kInf;
    const double nn = static_cast<double>(n);
    return std::sqrt(((nn - 1.0) / nn * W + B_over_n) / W);
}

double effective_sample_size(const std::vector<arma::vec>& chains) {
    double total = 0.0;
    for (const auto& c : chains) {
        const arma::uword n = c.n_elem;
        const double mu = arma::mean(c);
        const double v0 = arma::accu(arma::square(c - mu)) / n;
        if (v0 == 0.0) continue;
        // Geyer initial monotone positive sequence
        double rho_sum = 0.0;
        double prev_pair = kInf;
        for (arma::uword lag = 1; lag + 1 < n; lag += 2) {
            double g1 = 0.0, g2 = 0.0;
            for (arma::uword t = 0; t + lag < n; ++t) g1 += (c(t) - mu) * (c(t + lag) - mu);
            for (arma::uword t = 0; t + lag + 1 < n; ++t) g2 += (c(t) - mu) * (c(t + lag + 1) - mu);
            g1 /= n * v0;
            g2 /= n * v0;
            double pair = g1 + g2;
            if (pair < 0.0) break;
            pair = std::min(pair, prev_pair);  // enforce monotonicity
            prev_pair = pair;
            rho_sum += pair;
            if (lag > 1000) break;
        }
        total += n / (1.0 + 2.0 * rho_sum);
    }
    return total;
}

DiagnosticsReport compute_diagnostics(const std::vector<ChainOutput>& chains) {
    std::vector<const ChainOutput*> ok;
    for (const auto& c : chains)
        if (c.ok()) ok.push_back(&c);
    if (ok.empty()) throw std::invalid_argument("compute_diagnostics: no surviving chains");

    DiagnosticsReport rep;
    const auto& names = ok.front()->param_names;
    for (arma::uword j = 0; j < names.size(); ++j) {
        std::vector<arma::vec> cols;
        for (const auto* c : ok) cols.push_back(c->draws.col(j));
        const double r = ok.size() >= 2 || cols.front().n_elem >= 4 ? split_rhat(cols) : kNaN;
        rep.rhat[names[j]] = r;
        rep.ess[names[j]] = effective_sample_size(cols);
        if (std::isnan(r))
            rep.flagged.push_back(names[j]);
        else
            rep.max_rhat = std::max(rep.max_rhat, r);
    }
    // pool acceptance rates across chains
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto* c : ok)
        for (const auto& [k, v] : c->acceptance) {
            acc[k].first += v;
            acc[k].second += 1;
        }
    for (const auto& [k, v] : acc) rep.acceptance[k] = v.first / v.second;
    return rep;
}

// ---------------------------------------------------------------------------
// relabeling and membership

namespace {

struct MixtureColumns {
    std::vector<arma::uword> pi;                            // K
    std::vector<std::vector<arma::uword>> mu;               // K x q
    std::vector<std::vector<std::vector<arma::uword>>> psi; // K x q x q (upper addressed)
    arma::uword q = 0;
};

MixtureColumns locate_mixture_columns(const ChainOutput& chain, arma::uword K, arma::uword q) {
    MixtureColumns mc;
    mc.q = q;
    for (arma::uword k = 0; k < K; ++k)
        mc.pi.push_back(chain.param_index("pi." + std::to_string(k + 1)));
    mc.mu.resize(K);
    for (arma::uword k = 0; k < K; ++k)
        for (arma::uword j = 0; j < q; ++j)
            mc.mu[k].push_back(
                chain.param_index("mu." + std::to_string(k + 1) + "." + std::to_string(j + 1)));
    mc.psi.assign(K, std::vector<std::vector<arma::uword>>(q, std::vector<arma::uword>(q)));
    for (arma::uword k = 0; k < K; ++k)
        for (arma::uword a = 0; a < q; ++a)
            for (arma::uword b = a; b < q; ++b) {
                const arma::uword col = chain.param_index("Psi." + std::to_string(k + 1) + "." +
                                                          std::to_string(a + 1) + "." +
                                                          std::to_string(b + 1));
                mc.psi[k][a][b] = col;
                mc.psi[k][b][a] = col;
            }
    return mc;
}

}  // namespace

void relabel(std::vector<ChainOutput>& chains, const GibbsModel& model) {
    const arma::uword K = model.K();
    const arma::uword q = model.layout().q;
    if (K <= 1 || q == 0) return;

    for (auto& chain : chains) {
        if (!chain.ok()) continue;
        const MixtureColumns mc = locate_mixture_columns(chain, K, q);
        for (arma::uword t = 0; t < chain.draws.n_rows; ++t) {
            // sort components by mean coordinates (lexicographic, then index)
            std::vector<arma::uword> perm(K);
            std::iota(perm.begin(), perm.end(), 0);
            auto key_less = [&](arma::uword ka, arma::uword kb) {
                for (arma::uword j = 0; j < q; ++j) {
                    const double va = chain.draws(t, mc.mu[ka][j]);
                    const double vb = chain.draws(t, mc.mu[kb][j]);
                    if (va != vb) return va < vb;
                }
                return ka < kb;
            };
            std::stable_sort(perm.begin(), perm.end(), key_less);
            bool identity = true;
            for (arma::uword k = 0; k < K; ++k) identity = identity && perm[k] == k;
            if (identity) continue;

            arma::rowvec row = chain.draws.row(t);
            for (arma::uword k = 0; k < K; ++k) {
                const arma::uword src = perm[k];
                row(mc.pi[k]) = chain.draws(t, mc.pi[src]);
                for (arma::uword j = 0; j < q; ++j)
                    row(mc.mu[k][j]) = chain.draws(t, mc.mu[src][j]);
                for (arma::uword a = 0; a < q; ++a)
                    for (arma::uword b = a; b < q; ++b)
                        row(mc.psi[k][a][b]) = chain.draws(t, mc.psi[src][a][b]);
            }
            chain.draws.row(t) = row;

            std::vector<arma::uword> inverse(K);
            for (arma::uword k = 0; k < K; ++k) inverse[perm[k]] = k;
            for (arma::uword i = 0; i < chain.allocations.n_cols; ++i)
                chain.allocations(t, i) = inverse[chain.allocations(t, i)];
            if (t < chain.membership.size()) {
                arma::mat& tab = chain.membership[t];
                arma::mat permuted(tab.n_rows, tab.n_cols);
                for (arma::uword k = 0; k < K; ++k) permuted.col(k) = tab.col(perm[k]);
                tab = permuted;
            }
        }
    }
}

MembershipSummary posterior_membership(const std::vector<ChainOutput>& chains, arma::uword m,
                                       arma::uword K) {
    MembershipSummary ms;
    ms.probabilities.zeros(m, K);
    arma::uword total = 0;
    for (const auto& c : chains) {
        if (!c.ok()) continue;
        for (arma::uword t = 0; t < c.allocations.n_rows; ++t) {
            for (arma::uword i = 0; i < m; ++i) ms.probabilities(i, c.allocations(t, i)) += 1.0;
            ++total;
        }
    }
    if (total > 0) ms.probabilities /= static_cast<double>(total);
    ms.assignment.set_size(m);
    for (arma::uword i = 0; i < m; ++i) {
        arma::uword best = 0;
        for (arma::uword k = 1; k < K; ++k)
            if (ms.probabilities(i, k) > ms.probabilities(i, best)) best = k;
        ms.assignment(i) = best;
    }
    return ms;
}

double adjusted_rand_index(const arma::uvec& a, const arma::uvec& b) {
    if (a.n_elem != b.n_elem)
        throw std::invalid_argument("adjusted_rand_index: partitions differ in length");
    const arma::uword n = a.n_elem;
    const arma::uword ka = a.max() + 1, kb = b.max() + 1;
    arma::mat table(ka, kb, arma::fill::zeros);
    for (arma::uword i = 0; i < n; ++i) table(a(i), b(i)) += 1.0;

    auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sum_ij = 0.0;
    for (const auto& v : table) sum_ij += choose2(v);
    double sum_a = 0.0, sum_b = 0.0;
    for (arma::uword i = 0; i < ka; ++i) sum_a += choose2(arma::accu(table.row(i)));
    for (arma::uword j = 0; j < kb; ++j) sum_b += choose2(arma::accu(table.col(j)));
    const double total = choose2(static_cast<double>(n));
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return sum_ij == expected ? 1.0 : 0.0;
    return (sum_ij - expected) / (max_index - expected);
}

}  // namespace zilcm
