#include "zilcm/samplers.hpp"

#include <cmath>
#include <stdexcept>

#include "zilcm/math.hpp"

namespace zilcm {

namespace {

// One-sided rejection for a standard normal restricted to [a, inf), a >= 0.
// Shifted-exponential proposal with the optimal rate (Robert 1995).
double rtail_standard(double a, RngStream& rng) {
    const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
        const double x = a + rng.exponential() / lambda;
        const double d = x - lambda;
        if (std::log(rng.uniform()) <= -0.5 * d * d) return x;
    }
}

}  // namespace

double sample_truncated_normal(double mu, double sigma, double lower, double upper,
                               RngStream& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sample_truncated_normal: sigma <= 0");
    if (!(lower < upper)) throw std::invalid_argument("sample_truncated_normal: lower >= upper");

    double a = (lower - mu) / sigma;
    double b = (upper - mu) / sigma;

    // mirror so any tail interval sits on the right
    bool flipped = false;
    if (b <= 0.0) {
        const double t = a;
        a = -b;
        b = -t;
        flipped = true;
    }

    double z;
    if (a <= 0.0) {
        // interval covers the bulk: plain inverse CDF, no cancellation since Fa <= 1/2
        const double Fa = norm_cdf(a);
        const double mass = norm_cdf(b) - Fa;
        z = norm_quantile(Fa + rng.uniform() * mass);
    } else {
        // right-tail interval: work with survival probabilities
        const double Sa = norm_cdf(-a);
        const double Sb = std::isinf(b) ? 0.0 : norm_cdf(-b);
        const double mass = Sa - Sb;
        if (mass >= 1e-6) {
            z = -norm_quantile(Sa - rng.uniform() * mass);
        } else {
            do {
                z = rtail_standard(a, rng);
            } while (z > b);
        }
    }

    if (flipped) z = -z;
    double x = mu + sigma * z;
    // inverse-CDF rounding can graze the bounds; nudge inside
    if (x <= lower) x = std::nextafter(lower, upper);
    if (x >= upper) x = std::nextafter(upper, lower);
    return x;
}

double sample_inverse_gaussian(double mean, double shape, RngStream& rng) {
    if (!(mean > 0.0) || !(shape > 0.0))
        throw std::invalid_argument("sample_inverse_gaussian: parameters must be positive");
    const double nu = rng.normal();
    const double y = nu * nu;
    double x = mean + mean * mean * y / (2.0 * shape) -
               (mean / (2.0 * shape)) * std::sqrt(4.0 * mean * shape * y + mean * mean * y * y);
    if (!(x > 0.0)) x = std::numeric_limits<double>::min();  // rounding guard
    const double u = rng.uniform();
    if (u <= mean / (mean + x)) return x;
    return mean * mean / x;
}

arma::vec sample_dirichlet(const arma::vec& alpha, RngStream& rng) {
    if (alpha.n_elem == 0) throw std::invalid_argument("sample_dirichlet: empty alpha");
    arma::vec g(alpha.n_elem);
    for (arma::uword k = 0; k < alpha.n_elem; ++k) {
        if (!(alpha(k) > 0.0)) throw std::invalid_argument("sample_dirichlet: alpha_k <= 0");
        g(k) = rng.gamma(alpha(k), 1.0);
    }
    const double s = arma::accu(g);
    return g / s;
}

arma::mat sample_inverse_wishart(double df, const arma::mat& scale, RngStream& rng) {
    const arma::uword q = scale.n_rows;
    if (scale.n_cols != q) throw std::invalid_argument("sample_inverse_wishart: scale not square");
    if (!(df > static_cast<double>(q) - 1.0))
        throw std::invalid_argument("sample_inverse_wishart: df <= q - 1");
    arma::mat scale_chol;
    if (!arma::approx_equal(scale, scale.t(), "absdiff", 1e-10) ||
        !arma::chol(scale_chol, scale, "lower"))
        throw std::invalid_argument("sample_inverse_wishart: scale not SPD");
    arma::mat scale_inv;
    if (!arma::inv_sympd(scale_inv, scale))
        throw std::invalid_argument("sample_inverse_wishart: scale not SPD");

    // Bartlett factor of a Wishart(df, scale^-1) draw, then invert
    arma::mat A(q, q, arma::fill::zeros);
    for (arma::uword i = 0; i < q; ++i) {
        A(i, i) = std::sqrt(rng.chisq(df - static_cast<double>(i)));
        for (arma::uword j = 0; j < i; ++j) A(i, j) = rng.normal();
    }
    arma::mat C = arma::chol(scale_inv, "lower");
    arma::mat L = C * A;  // precision draw = L L'
    arma::mat Linv = arma::inv(arma::trimatl(L));
    arma::mat W = Linv.t() * Linv;
    return 0.5 * (W + W.t());  // enforce exact symmetry
}

namespace {

// Devroye sampler for PG(1, c) = J*(1, c/2)/4 (Polson, Scott & Windle 2013).
constexpr double kPgTrunc = 0.64;

double pg_coef(int n, double x) {
    // piecewise coefficients a_n(x) of the alternating series
    const double h = n + 0.5;
    if (x > kPgTrunc) {
        return M_PI * h * std::exp(-h * h * M_PI * M_PI * x / 2.0);
    }
    return M_PI * h * std::pow(2.0 / (M_PI * x), 1.5) * std::exp(-2.0 * h * h / x);
}

// CDF of inverse-Gaussian(mu, lambda=1) at t, written in z = 1/mu to stay
// finite as z -> 0.
double pg_igauss_cdf(double t, double z) {
    const double rt = std::sqrt(t);
    const double b = (t * z - 1.0) / rt;
    const double a = -(t * z + 1.0) / rt;
    return norm_cdf(b) + std::exp(2.0 * z + log_norm_cdf(a));
}

// Inverse-Gaussian(1/z, 1) restricted to (0, t].
double pg_rtigauss(double z, double t, RngStream& rng) {
    z = std::fabs(z);
    const double mu = 1.0 / z;
    if (mu > t) {
        // chi-like proposal, accept with exp(-z^2 x / 2)
        for (;;) {
            double e1, e2;
            do {
                e1 = rng.exponential();
                e2 = rng.exponential();
            } while (e1 * e1 > 2.0 * e2 / t);
            const double x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            if (std::log(rng.uniform()) <= -0.5 * z * z * x) return x;
        }
    }
    for (;;) {
        const double x = sample_inverse_gaussian(mu, 1.0, rng);
        if (x <= t) return x;
    }
}

double pg1_draw(double c, RngStream& rng) {
    const double z = 0.5 * std::fabs(c);
    const double k = M_PI * M_PI / 8.0 + z * z / 2.0;
    const double log_p_exp = std::log(M_PI / (2.0 * k)) - k * kPgTrunc;
    const double log_p_ig = -z + std::log(pg_igauss_cdf(kPgTrunc, z)) + std::log(2.0);
    const double p_right = 1.0 / (1.0 + std::exp(log_p_ig - log_p_exp));
    for (;;) {
        double x;
        if (rng.uniform() < p_right) {
            x = kPgTrunc + rng.exponential() / k;
        } else {
            x = pg_rtigauss(z, kPgTrunc, rng);
        }
        // squeeze on the alternating series
        double s = pg_coef(0, x);
        const double y = rng.uniform() * s;
        int n = 0;
        for (;;) {
            ++n;
            if (n % 2 == 1) {
                s -= pg_coef(n, x);
                if (y <= s) return x / 4.0;
            } else {
                s += pg_coef(n, x);
                if (y > s) break;  // reject, start over
            }
        }
    }
}

}  // namespace

double sample_polya_gamma(double b, double c, RngStream& rng) {
    if (!(b > 0.0)) throw std::invalid_argument("sample_polya_gamma: b <= 0");
    const double bi = std::round(b);
    if (std::fabs(b - bi) > 1e-12)
        throw std::invalid_argument("sample_polya_gamma: only integer b supported");
    double sum = 0.0;
    for (long i = 0; i < static_cast<long>(bi); ++i) sum += pg1_draw(c, rng);
    return sum;
}

arma::vec sample_mvn(const arma::vec& mean, const arma::mat& cov, RngStream& rng) {
    if (cov.n_rows != mean.n_elem || cov.n_cols != mean.n_elem)
        throw std::invalid_argument("sample_mvn: dimension mismatch between mean and cov");
    arma::mat L;
    if (!arma::chol(L, cov, "lower"))
        throw std::runtime_error("sample_mvn: covariance not positive definite");
    arma::vec z(mean.n_elem);
    for (arma::uword i = 0; i < z.n_elem; ++i) z(i) = rng.normal();
    return mean + L * z;
}

arma::vec sample_mvn_canonical(const arma::vec& h, const arma::mat& precision, RngStream& rng) {
    arma::mat L;
    if (!arma::chol(L, precision, "lower")) {
        throw std::runtime_error("sample_mvn_canonical: precision not positive definite; diag = " +
                                 std::to_string(precision.n_rows ? precision(0, 0) : 0.0));
    }
    // mean = P^-1 h via two triangular solves
    arma::vec w = arma::solve(arma::trimatl(L), h);
    arma::vec mean = arma::solve(arma::trimatu(L.t()), w);
    arma::vec z(h.n_elem);
    for (arma::uword i = 0; i < z.n_elem; ++i) z(i) = rng.normal();
    return mean + arma::solve(arma::trimatu(L.t()), z);
}

arma::uword sample_categorical_log(const arma::vec& log_weights, RngStream& rng) {
    const double m = log_weights.max();
    arma::vec p = arma::exp(log_weights - m);
    const double total = arma::accu(p);
    double u = rng.uniform() * total;
    for (arma::uword k = 0; k + 1 < p.n_elem; ++k) {
        u -= p(k);
        if (u <= 0.0) return k;
    }
    return p.n_elem - 1;
}

}  // namespace zilcm
