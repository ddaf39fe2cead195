#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "zilcm/likelihood.hpp"
#include "zilcm/math.hpp"
#include "zilcm/rng.hpp"
#include "zilcm/synth.hpp"

using namespace zilcm;

TEST_CASE("linear predictor: hand cases and dimension checks") {
    CHECK(linear_predictor(arma::rowvec{1.0, 2.0}, arma::vec{0.0, 0.0}, arma::rowvec{1.0},
                           arma::vec{0.0}) == 0.0);
    CHECK(linear_predictor(arma::rowvec{1.0, 2.0}, arma::vec{3.0, -1.0}, arma::rowvec{1.0},
                           arma::vec{0.5}) == doctest::Approx(1.5));
    CHECK_THROWS_AS(linear_predictor(arma::rowvec{1.0}, arma::vec{1.0, 2.0}, arma::rowvec{},
                                     arma::vec{}),
                    std::invalid_argument);
}

TEST_CASE("linear predictor: random case matches a brute-force dot product") {
    RngStream rng(5, 0);
    for (int rep = 0; rep < 20; ++rep) {
        arma::rowvec x(5), z(3);
        arma::vec b(5), g(3);
        for (auto& v : x) v = rng.normal();
        for (auto& v : z) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        for (auto& v : g) v = rng.normal();
        double expect = 0.0;
        for (int j = 0; j < 5; ++j) expect += x(j) * b(j);
        for (int j = 0; j < 3; ++j) expect += z(j) * g(j);
        CHECK(linear_predictor(x, b, z, g) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("linear predictor is linear in each argument") {
    RngStream rng(6, 0);
    for (int rep = 0; rep < 50; ++rep) {
        arma::rowvec x(4), z(2);
        arma::vec b(4), g(2);
        for (auto& v : x) v = rng.normal();
        for (auto& v : z) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        for (auto& v : g) v = rng.normal();
        const double a = rng.normal();
        const double f = linear_predictor(x, b, z, g);
        const double fb = linear_predictor(x, arma::vec(a * b), z, arma::vec(0.0 * g));
        const double fg = linear_predictor(x, arma::vec(0.0 * b), z, arma::vec(a * g));
        const double fa = linear_predictor(x, arma::vec(a * b), z, arma::vec(a * g));
        CHECK(fa == doctest::Approx(a * f).epsilon(1e-12));
        CHECK(fb + fg == doctest::Approx(a * f).epsilon(1e-12));
    }
}

TEST_CASE("log-likelihood spot values") {
    // Tobit censored point at eta=0, sigma=1: log Phi(0) = log 0.5
    CHECK(loglik_tobit_cell(0.0, 0.0, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    // ZIP zero mass: log(0.3 + 0.7 e^-2)
    const double psi = std::log(0.3 / 0.7);  // logit of p = 0.3
    CHECK(loglik_zip_cell(0.0, psi, std::log(2.0)) ==
          doctest::Approx(std::log(0.3 + 0.7 * std::exp(-2.0))).epsilon(1e-10));
    CHECK(std::exp(loglik_zip_cell(0.0, psi, std::log(2.0))) == doctest::Approx(0.39475).epsilon(1e-4));
    // two-part zero at logit(p) = 0: log 0.5
    CHECK(loglik_twopart_cell(0.0, 0.0, 1.0, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    // gaussian at the mode
    CHECK(loglik_gaussian_cell(1.0, 1.0, 1.0) == doctest::Approx(-0.5 * kLogTwoPi).epsilon(1e-12));
}

TEST_CASE("log-likelihood rejects non-finite predictors") {
    CHECK_THROWS_AS(loglik_gaussian_cell(0.0, kNaN, 1.0), std::domain_error);
    CHECK_THROWS_AS(loglik_tobit_cell(0.0, kInf, 1.0), std::domain_error);
    CHECK_THROWS_AS(loglik_twopart_cell(0.0, kNaN, 0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(loglik_zip_cell(0.0, 0.0, kNaN), std::domain_error);
}

// densities integrate (sum) to one: trapezoid quadrature for the continuous
// part, plus the point mass at zero where the family has one
TEST_CASE("gaussian density integrates to 1") {
    const double eta = 0.7, s2 = 1.9;
    const double lo = eta - 12 * std::sqrt(s2), hi = eta + 12 * std::sqrt(s2);
    const int n = 40001;
    double total = 0.0;
    const double dx = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) {
        const double y = lo + i * dx;
        const double f = std::exp(loglik_gaussian_cell(y, eta, s2));
        total += f * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    }
    CHECK(total * dx == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("tobit observation law has total mass 1 (point mass + density)") {
    for (double eta : {-1.0, 0.0, 1.3}) {
        const double s2 = 1.21;
        double total = std::exp(loglik_tobit_cell(0.0, eta, s2));  // P(y = 0)
        const double hi = eta + 12 * std::sqrt(s2);
        const int n = 40001;
        const double dx = hi / (n - 1);
        for (int i = 0; i < n; ++i) {
            const double y = i * dx;
            if (y <= 0.0) continue;
            total += std::exp(loglik_tobit_cell(y, eta, s2)) * dx * ((i == n - 1) ? 0.5 : 1.0);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("two-part observation law has total mass 1") {
    const double psi = 0.4, eta = 0.3, s2 = 0.8;
    double total = std::exp(loglik_twopart_cell(0.0, psi, eta, s2));
    // log-normal bulk: integrate on the log scale, y = exp(u)
    const int n = 60001;
    const double lo = eta - 14 * std::sqrt(s2), hi = eta + 14 * std::sqrt(s2);
    const double du = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) {
        const double u = lo + i * du;
        const double y = std::exp(u);
        // f(y) dy = f(exp(u)) exp(u) du
        total += std::exp(loglik_twopart_cell(y, psi, eta, s2)) * y * du *
                 ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("zip pmf sums to 1 up to the count cap") {
    const double psi = -0.5, llam = std::log(3.0);
    double total = 0.0;
    for (int y = 0; y <= 200; ++y) total += std::exp(loglik_zip_cell(y, psi, llam));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("zip zero probability matches monte carlo frequency from the generator") {
    SimScenario sc = SimScenario::reference_design(77);
    sc.m = 2000;
    sc.timepoints = 5;
    sc.covariates = {{"x1", 0.0, 0.0}};
    sc.component_means = {arma::vec{0.0}, arma::vec{0.0}};
    sc.component_scales = {1e-12, 1e-12};  // no random-effect noise
    const double p = 0.3, lam = 2.0;
    SimFeature f;
    f.name = "y";
    f.family = Family::Zip;
    f.beta = arma::vec{std::log(lam)};  // unit covariate below, so log-lambda = log(lam)
    f.zero_prob = p;
    sc.features = {f};
    sc.covariates = {{"x1", 1.0, 0.0}};
    const SimResult sim = simulate_dataset(sc);
    arma::uword zeros = 0, total = 0;
    for (arma::uword i = 0; i < sim.dataset.m(); ++i) {
        const auto& y = sim.dataset.blocks[i][0].y;
        zeros += arma::sum(y == 0.0);
        total += y.n_elem;
    }
    const double p0 = p + (1.0 - p) * std::exp(-lam);
    const double freq = static_cast<double>(zeros) / total;
    const double se = std::sqrt(p0 * (1.0 - p0) / total);
    CHECK(std::fabs(freq - p0) < 3.0 * se + 1e-12);
}

TEST_CASE("validate_dataset: zero fractions and dimension summary") {
    using namespace zilcm::testing;
    // small stand-in with the survey shape: R = 3 features with target zero rates
    const arma::uword m = 400, n = 10;
    auto ds = make_design(m, n, 2,
                          {{"oopme", Family::Tobit, ZipVariant::YauLee},
                           {"debt", Family::TwoPart, ZipVariant::YauLee},
                           {"hosp", Family::Zip, ZipVariant::YauLee}},
                          123);
    RngStream rng(9, 1);
    // Tobit: eta chosen so Phi(-eta) = 0.083; TwoPart zero rate 0.39; ZIP zero mass 0.86
    const double eta_tobit = -norm_quantile(0.083);
    for (arma::uword i = 0; i < m; ++i) {
        for (arma::uword j = 0; j < n; ++j) {
            const double ystar = eta_tobit + rng.normal();
            ds.blocks[i][0].y(j) = ystar > 0 ? ystar : 0.0;
            ds.blocks[i][1].y(j) = rng.uniform() < 0.39 ? 0.0 : std::exp(rng.normal());
            // ZIP with p s.t. p + (1-p)e^-2 = 0.86
            const double p = (0.86 - std::exp(-2.0)) / (1.0 - std::exp(-2.0));
            ds.blocks[i][2].y(j) =
                rng.uniform() < p ? 0.0 : static_cast<double>(rng.poisson(2.0));
        }
    }
    const ValidationReport rep = validate_dataset(ds);
    CHECK(rep.ok());
    CHECK(rep.m == m);
    CHECK(rep.R == 3);
    CHECK(rep.total_rows == m * n * 3);
    CHECK(std::fabs(rep.zero_fraction[0] - 0.083) < 0.02);
    CHECK(std::fabs(rep.zero_fraction[1] - 0.39) < 0.03);
    CHECK(std::fabs(rep.zero_fraction[2] - 0.86) < 0.02);
}

TEST_CASE("validate_dataset: identifiability violation when X and z share a column") {
    using namespace zilcm::testing;
    auto ds = make_design(3, 4, 2, {{"y", Family::Gaussian, ZipVariant::YauLee}}, 1);
    ds.z_names = {"x1"};  // collides with a covariate name
    const ValidationReport rep = validate_dataset(ds);
    CHECK(!rep.ok());
    CHECK(!rep.identifiable);
}

TEST_CASE("validate_dataset: degenerate and ill-typed inputs") {
    LongitudinalDataset empty;
    CHECK(!validate_dataset(empty).ok());

    using namespace zilcm::testing;
    auto ds = make_design(2, 3, 1, {{"y", Family::Zip, ZipVariant::YauLee}}, 2);
    ds.blocks[0][0].y(1) = -3.0;  // negative count
    CHECK(!validate_dataset(ds).ok());

    auto ds2 = make_design(2, 3, 1, {{"y", Family::Zip, ZipVariant::YauLee}}, 3);
    ds2.blocks[0][0].y(1) = 2.5;  // non-integer count
    CHECK(!validate_dataset(ds2).ok());

    auto ds3 = make_design(2, 3, 1, {{"y", Family::Tobit, ZipVariant::YauLee}}, 4);
    ds3.blocks[1][0].y(0) = -0.1;  // negative tobit response
    CHECK(!validate_dataset(ds3).ok());
}

TEST_CASE("random effects layout partitions 1..q exactly once") {
    using namespace zilcm::testing;
    auto ds = make_design(2, 3, 1,
                          {{"a", Family::Gaussian, ZipVariant::YauLee},
                           {"b", Family::TwoPart, ZipVariant::YauLee},
                           {"c", Family::Zip, ZipVariant::YauLee},
                           {"d", Family::Zip, ZipVariant::Hall},
                           {"e", Family::Tobit, ZipVariant::YauLee}},
                          5);
    const auto layout = RandomEffectsLayout::build(ds);
    // gaussian 1 + twopart 2 + yaulee zip 2 + hall zip 1 + tobit 1 = 7
    CHECK(layout.q == 7);
    std::vector<int> covered(layout.q, 0);
    for (const auto& s : layout.slices)
        for (arma::uword d = 0; d < s.dim; ++d) covered[s.offset + d] += 1;
    for (int c : covered) CHECK(c == 1);
    CHECK(layout.find(1, Part::Positive).dim == 1);
    CHECK(layout.has(3, Part::Zero) == false);  // Hall: no zero-part slice
    CHECK(layout.has(3, Part::Count) == true);
}
