#include <doctest.h>

#include <cmath>

#include "zilcm/math.hpp"
#include "zilcm/rng.hpp"
#include "zilcm/samplers.hpp"

using namespace zilcm;

namespace {
constexpr arma::uword kN = 100000;
}

TEST_CASE("rng: identical (seed, stream) reproduces sequences bit for bit") {
    RngStream a(42, 3), b(42, 3), c(42, 4);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 10000; ++i) {
        const auto ua = a.next_u64(), ub = b.next_u64(), uc = c.next_u64();
        all_equal = all_equal && (ua == ub);
        any_diff = any_diff || (ua != uc);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("rng: normal matches standard moments") {
    RngStream rng(7, 0);
    double s = 0, s2 = 0;
    for (arma::uword i = 0; i < kN; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::fabs(s / kN) < 0.02);
    CHECK(std::fabs(s2 / kN - 1.0) < 0.02);
}

TEST_CASE("norm_quantile inverts norm_cdf") {
    // left tail only: near p = 1 the inversion is limited by double rounding of 1-p
    for (double x : {-8.0, -3.2, -0.5, 0.0, 0.7, 2.4})
        CHECK(norm_quantile(norm_cdf(x)) == doctest::Approx(x).epsilon(1e-9));
    CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
}

TEST_CASE("log_norm_cdf agrees with direct computation and stays finite in the tail") {
    for (double x : {-5.0, -1.0, 0.0, 1.5, 6.0})
        CHECK(log_norm_cdf(x) == doctest::Approx(std::log(norm_cdf(x))).epsilon(1e-12));
    const double v = log_norm_cdf(-40.0);
    CHECK(std::isfinite(v));
    // phi/Mills asymptotics: -0.5*40^2 - log(40) - 0.5 log(2pi) + log series
    CHECK(v == doctest::Approx(-804.608442).epsilon(1e-6));
}

TEST_CASE("truncated normal: half-normal mean on (-inf, 0]") {
    RngStream rng(1, 0);
    double s = 0;
    bool support = true;
    for (arma::uword i = 0; i < kN; ++i) {
        const double x = sample_truncated_normal(0, 1, -kInf, 0, rng);
        support = support && x <= 0.0;
        s += x;
    }
    CHECK(support);
    CHECK(std::fabs(s / kN + 0.79788) < 0.01);
}

TEST_CASE("truncated normal: untruncated case recovers the mean") {
    RngStream rng(2, 0);
    double s = 0;
    for (arma::uword i = 0; i < kN; ++i) s += sample_truncated_normal(5, 1, -kInf, kInf, rng);
    CHECK(std::fabs(s / kN - 5.0) < 0.02);
}

TEST_CASE("truncated normal: draws never escape a far-tail interval") {
    RngStream rng(3, 0);
    bool inside = true;
    for (int i = 0; i < 20000; ++i) {
        const double x = sample_truncated_normal(0, 1, 10, 11, rng);
        inside = inside && x >= 10.0 && x <= 11.0;
    }
    CHECK(inside);
    for (int i = 0; i < 20000; ++i) {
        const double x = sample_truncated_normal(0, 1, -11, -10, rng);
        inside = inside && x >= -11.0 && x <= -10.0;
    }
    CHECK(inside);
}

TEST_CASE("truncated normal: draws stay inside moderate intervals") {
    RngStream rng(4, 0);
    bool inside = true;
    for (int i = 0; i < 50000; ++i) {
        const double x = sample_truncated_normal(1.0, 2.0, -0.5, 0.75, rng);
        inside = inside && x > -0.5 && x < 0.75;
    }
    CHECK(inside);
}

TEST_CASE("truncated normal: tail mean matches the exact conditional expectation") {
    // E[X | X > a] = phi(a) / (1 - Phi(a)) for a standard normal
    RngStream rng(5, 0);
    const double a = 3.0;
    double s = 0;
    for (arma::uword i = 0; i < kN; ++i) s += sample_truncated_normal(0, 1, a, kInf, rng);
    const double expect = norm_pdf(a) / norm_cdf(-a);
    CHECK(std::fabs(s / kN - expect) < 0.01);
}

TEST_CASE("truncated normal rejects bad arguments") {
    RngStream rng(6, 0);
    CHECK_THROWS_AS(sample_truncated_normal(0, -1, 0, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_truncated_normal(0, 1, 2, 1, rng), std::invalid_argument);
}

TEST_CASE("inverse gaussian: mean and variance") {
    RngStream rng(8, 0);
    double s = 0, s2 = 0;
    bool pos = true;
    for (arma::uword i = 0; i < kN; ++i) {
        const double x = sample_inverse_gaussian(2.0, 4.0, rng);
        pos = pos && x > 0.0;
        s += x;
        s2 += x * x;
    }
    CHECK(pos);
    const double mean = s / kN;
    CHECK(std::fabs(mean - 2.0) < 0.05);
    // Var = mean^3 / shape = 2
    CHECK(std::fabs(s2 / kN - mean * mean - 2.0) < 0.1);
}

TEST_CASE("inverse gaussian: variance shrinks as shape grows") {
    RngStream rng(9, 0);
    double s2 = 0, s = 0;
    const arma::uword n = 20000;
    for (arma::uword i = 0; i < n; ++i) {
        const double x = sample_inverse_gaussian(1.0, 1e6, rng);
        s += x;
        s2 += x * x;
    }
    const double var = s2 / n - (s / n) * (s / n);
    CHECK(var < 1e-5);
}

TEST_CASE("inverse gaussian rejects non-positive parameters") {
    RngStream rng(10, 0);
    CHECK_THROWS_AS(sample_inverse_gaussian(0.0, 1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_inverse_gaussian(1.0, -1.0, rng), std::invalid_argument);
}

TEST_CASE("dirichlet: means match alpha / sum(alpha)") {
    RngStream rng(11, 0);
    arma::vec m1(2, arma::fill::zeros), m2(2, arma::fill::zeros), m3(2, arma::fill::zeros);
    bool sums_ok = true;
    for (arma::uword i = 0; i < kN; ++i) {
        const arma::vec d1 = sample_dirichlet(arma::vec{1.0, 1.0}, rng);
        const arma::vec d2 = sample_dirichlet(arma::vec{4.0, 2.0}, rng);
        const arma::vec d3 = sample_dirichlet(arma::vec{100.0, 1.0}, rng);
        sums_ok = sums_ok && std::fabs(arma::accu(d1) - 1.0) < 1e-12 && d1.min() >= 0.0;
        m1 += d1;
        m2 += d2;
        m3 += d3;
    }
    CHECK(sums_ok);
    CHECK(std::fabs(m1(0) / kN - 0.5) < 0.01);
    CHECK(std::fabs(m2(0) / kN - 2.0 / 3.0) < 0.01);
    CHECK(std::fabs(m3(0) / kN - 100.0 / 101.0) < 0.01);
}

TEST_CASE("dirichlet rejects non-positive alpha") {
    RngStream rng(12, 0);
    CHECK_THROWS_AS(sample_dirichlet(arma::vec{1.0, 0.0}, rng), std::invalid_argument);
}

TEST_CASE("inverse wishart: mean is scale/(df-q-1), draws symmetric positive definite") {
    RngStream rng(13, 0);
    const arma::uword q = 2;
    const arma::mat scale = 7.0 * arma::eye(q, q);
    const double df = 10.0;
    arma::mat acc(q, q, arma::fill::zeros);
    bool spd = true, sym = true;
    const arma::uword n = 10000;
    for (arma::uword i = 0; i < n; ++i) {
        const arma::mat W = sample_inverse_wishart(df, scale, rng);
        sym = sym && arma::approx_equal(W, W.t(), "absdiff", 1e-12);
        arma::mat L;
        spd = spd && arma::chol(L, W, "lower");
        acc += W;
    }
    CHECK(sym);
    CHECK(spd);
    const arma::mat mean = acc / n;
    // scale/(df - q - 1) = I elementwise within 0.05
    CHECK(std::fabs(mean(0, 0) - 1.0) < 0.05);
    CHECK(std::fabs(mean(1, 1) - 1.0) < 0.05);
    CHECK(std::fabs(mean(0, 1)) < 0.05);
}

TEST_CASE("inverse wishart: q=1 reduces to inverse gamma") {
    RngStream rng(14, 0);
    const double df = 8.0, scale = 3.0;
    double s = 0;
    const arma::uword n = 200000;
    for (arma::uword i = 0; i < n; ++i)
        s += sample_inverse_wishart(df, arma::mat{scale}, rng)(0, 0);
    // scalar specialization: mean = scale / (df - 2)
    CHECK(std::fabs(s / n - scale / (df - 2.0)) / (scale / (df - 2.0)) < 0.01);
}

TEST_CASE("inverse wishart rejects bad arguments") {
    RngStream rng(15, 0);
    CHECK_THROWS_AS(sample_inverse_wishart(0.5, arma::eye(2, 2), rng), std::invalid_argument);
    arma::mat not_spd = {{1.0, 2.0}, {2.0, 1.0}};
    CHECK_THROWS_AS(sample_inverse_wishart(5.0, not_spd, rng), std::invalid_argument);
}

TEST_CASE("polya-gamma: PG(1,0) mean 1/4 and variance 1/24") {
    RngStream rng(16, 0);
    double s = 0, s2 = 0;
    bool pos = true;
    for (arma::uword i = 0; i < kN; ++i) {
        const double x = sample_polya_gamma(1.0, 0.0, rng);
        pos = pos && x > 0.0;
        s += x;
        s2 += x * x;
    }
    CHECK(pos);
    CHECK(std::fabs(s / kN - 0.25) < 0.005);
    CHECK(std::fabs(s2 / kN - (s / kN) * (s / kN) - 1.0 / 24.0) < 0.002);
}

TEST_CASE("polya-gamma: PG(1,2) mean tanh(1)/4") {
    RngStream rng(17, 0);
    double s = 0;
    for (arma::uword i = 0; i < kN; ++i) s += sample_polya_gamma(1.0, 2.0, rng);
    CHECK(std::fabs(s / kN - 0.25 * std::tanh(1.0)) < 0.005);
    CHECK(std::fabs(s / kN - 0.19040) < 0.005);
}

TEST_CASE("polya-gamma: negative tilt is symmetric and integer b sums draws") {
    RngStream rng(18, 0);
    double s_neg = 0, s_b3 = 0;
    const arma::uword n = 50000;
    for (arma::uword i = 0; i < n; ++i) {
        s_neg += sample_polya_gamma(1.0, -2.0, rng);
        s_b3 += sample_polya_gamma(3.0, 1.0, rng);
    }
    CHECK(std::fabs(s_neg / n - 0.25 * std::tanh(1.0)) < 0.005);
    // E[PG(3,1)] = (3/2) tanh(0.5)
    CHECK(std::fabs(s_b3 / n - 1.5 * std::tanh(0.5)) < 0.01);
    CHECK_THROWS_AS(sample_polya_gamma(0.0, 1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_polya_gamma(1.5, 1.0, rng), std::invalid_argument);
}

TEST_CASE("mvn: sample moments converge to the inputs") {
    RngStream rng(19, 0);
    const arma::vec mean{1.0, 2.0};
    arma::mat cov = {{1.0, 0.9}, {0.9, 1.0}};
    arma::vec s(2, arma::fill::zeros);
    double sxy = 0, sxx = 0, syy = 0;
    for (arma::uword i = 0; i < kN; ++i) {
        const arma::vec x = sample_mvn(mean, cov, rng);
        s += x;
        sxx += (x(0) - 1.0) * (x(0) - 1.0);
        syy += (x(1) - 2.0) * (x(1) - 2.0);
        sxy += (x(0) - 1.0) * (x(1) - 2.0);
    }
    CHECK(std::fabs(s(0) / kN - 1.0) < 0.02);
    CHECK(std::fabs(s(1) / kN - 2.0) < 0.02);
    const double corr = sxy / std::sqrt(sxx * syy);
    CHECK(std::fabs(corr - 0.9) < 0.01);
}

TEST_CASE("mvn rejects dimension mismatch and non-SPD covariance") {
    RngStream rng(20, 0);
    CHECK_THROWS_AS(sample_mvn(arma::vec{0.0}, arma::eye(2, 2), rng), std::invalid_argument);
    arma::mat bad = {{1.0, 2.0}, {2.0, 1.0}};
    CHECK_THROWS_AS(sample_mvn(arma::vec{0.0, 0.0}, bad, rng), std::runtime_error);
}

TEST_CASE("mvn canonical form agrees with moment form") {
    RngStream rng(21, 0);
    arma::mat prec = {{2.0, 0.5}, {0.5, 1.0}};
    const arma::vec h{1.0, -1.0};
    const arma::mat cov = arma::inv_sympd(prec);
    const arma::vec mean = cov * h;
    arma::vec s(2, arma::fill::zeros);
    const arma::uword n = 50000;
    for (arma::uword i = 0; i < n; ++i) s += sample_mvn_canonical(h, prec, rng);
    CHECK(std::fabs(s(0) / n - mean(0)) < 0.02);
    CHECK(std::fabs(s(1) / n - mean(1)) < 0.02);
}

TEST_CASE("samplers are reproducible across identical streams") {
    RngStream a(99, 5), b(99, 5);
    bool same = true;
    for (int i = 0; i < 10000; ++i) {
        same = same && sample_truncated_normal(0, 1, -kInf, 0, a) ==
                           sample_truncated_normal(0, 1, -kInf, 0, b);
        same = same && sample_polya_gamma(1, 1.3, a) == sample_polya_gamma(1, 1.3, b);
        same = same && sample_inverse_gaussian(1.5, 2.0, a) == sample_inverse_gaussian(1.5, 2.0, b);
        same = same && a.gamma(2.3, 1.7) == b.gamma(2.3, 1.7);
    }
    CHECK(same);
}

TEST_CASE("poisson sampler matches mean and variance at small and large rates") {
    RngStream rng(22, 0);
    for (double lam : {0.7, 4.0, 80.0}) {
        double s = 0, s2 = 0;
        const arma::uword n = 50000;
        for (arma::uword i = 0; i < n; ++i) {
            const double x = static_cast<double>(rng.poisson(lam));
            s += x;
            s2 += x * x;
        }
        const double mean = s / n, var = s2 / n - mean * mean;
        CHECK(std::fabs(mean - lam) < 4.0 * std::sqrt(lam / n) + 0.02);
        CHECK(std::fabs(var - lam) / lam < 0.05);
    }
}
