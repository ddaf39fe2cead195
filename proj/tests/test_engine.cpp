#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_support.hpp"
#include "zilcm/engine.hpp"
#include "zilcm/synth.hpp"

using namespace zilcm;
using namespace zilcm::testing;

namespace {

LongitudinalDataset small_gaussian_ds(arma::uword m, arma::uword n, std::uint64_t seed) {
    auto ds = make_design(m, n, 2, {{"y", Family::Gaussian, ZipVariant::YauLee}}, seed);
    RngStream fill(seed, 44);
    for (arma::uword i = 0; i < m; ++i)
        for (arma::uword j = 0; j < n; ++j)
            ds.blocks[i][0].y(j) = arma::dot(ds.blocks[i][0].X.row(j), arma::vec{1.0, -0.5}) +
                                   0.3 * fill.normal() + ds.blocks[i][0].z(j, 0) * fill.normal();
    return ds;
}

}  // namespace

TEST_CASE("config validation enforces the draw-count contract") {
    McmcConfig cfg;
    cfg.iterations = 100;
    cfg.burn_in = 50;
    cfg.thin = 5;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.stored_draws() == 10);

    cfg.burn_in = 100;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.burn_in = 50;
    cfg.thin = 7;  // 50 not divisible by 7
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.thin = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.thin = 5;
    cfg.chains = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("run_chain stores exactly (iterations - burn_in) / thin draws") {
    const auto ds = small_gaussian_ds(8, 4, 1);
    GibbsModel model(ds, Priors{}, 2);
    McmcConfig cfg;
    cfg.chains = 1;
    cfg.iterations = 100;
    cfg.burn_in = 50;
    cfg.thin = 5;
    cfg.K = 2;
    const ChainOutput out = run_chain(model, cfg, 0);
    REQUIRE(out.ok());
    CHECK(out.draws.n_rows == 10);
    CHECK(out.deviance.n_elem == 10);
    CHECK(out.allocations.n_rows == 10);
    CHECK(out.gamma_draws.size() == 10);
    CHECK(out.sweep_seconds.n_elem == 100);
}

TEST_CASE("identical (seed, chain_id) gives bit-identical output; other ids differ") {
    const auto ds = small_gaussian_ds(8, 4, 2);
    GibbsModel model(ds, Priors{}, 2);
    McmcConfig cfg;
    cfg.iterations = 60;
    cfg.burn_in = 20;
    cfg.thin = 4;
    cfg.K = 2;
    cfg.seed = 999;
    const ChainOutput a = run_chain(model, cfg, 0);
    const ChainOutput b = run_chain(model, cfg, 0);
    const ChainOutput c = run_chain(model, cfg, 1);
    CHECK(arma::approx_equal(a.draws, b.draws, "absdiff", 0.0));
    CHECK(arma::approx_equal(a.deviance, b.deviance, "absdiff", 0.0));
    CHECK(arma::all(arma::vectorise(a.allocations == b.allocations)));
    CHECK(!arma::approx_equal(a.draws, c.draws, "absdiff", 1e-12));
}

TEST_CASE("identical seed gives identical initial states") {
    const auto ds = small_gaussian_ds(20, 4, 3);
    GibbsModel model(ds, Priors{}, 3);
    RngStream r1(5, 2), r2(5, 2);
    const SweepState s1 = model.initialize(r1);
    const SweepState s2 = model.initialize(r2);
    CHECK(arma::approx_equal(model.flatten(s1), model.flatten(s2), "absdiff", 0.0));
    CHECK(arma::all(s1.mixture.C == s2.mixture.C));
}

TEST_CASE("random init keeps clusters roughly balanced at m = 300") {
    SimScenario sc = SimScenario::reference_design(4);
    const SimResult sim = simulate_dataset(sc);
    GibbsModel model(sim.dataset, Priors{}, 2);
    RngStream rng(6, 0);
    const SweepState s = model.initialize(rng, InitStrategy::Random);
    const arma::uword n1 = arma::sum(s.mixture.C == 0);
    CHECK(n1 >= 75);
    CHECK(300 - n1 >= 75);
}

TEST_CASE("initialize rejects K larger than m") {
    const auto ds = small_gaussian_ds(3, 4, 5);
    GibbsModel model(ds, Priors{}, 5);
    RngStream rng(7, 0);
    CHECK_THROWS_AS(model.initialize(rng), std::invalid_argument);
}

TEST_CASE("run_chains: ordered outputs, distinct streams, serial equals parallel") {
    const auto ds = small_gaussian_ds(10, 4, 6);
    GibbsModel model(ds, Priors{}, 2);
    McmcConfig cfg;
    cfg.chains = 3;
    cfg.iterations = 40;
    cfg.burn_in = 10;
    cfg.thin = 3;
    cfg.K = 2;

    McmcConfig serial = cfg;
    serial.threads = 1;
    McmcConfig parallel = cfg;
    parallel.threads = 2;
    const auto xs = run_chains(model, serial);
    const auto xp = run_chains(model, parallel);
    REQUIRE(xs.size() == 3);
    REQUIRE(xp.size() == 3);
    for (arma::uword c = 0; c < 3; ++c) {
        CHECK(xs[c].chain_id == c);
        CHECK(xs[c].ok());
        CHECK(arma::approx_equal(xs[c].draws, xp[c].draws, "absdiff", 0.0));
        CHECK(arma::approx_equal(xs[c].deviance, xp[c].deviance, "absdiff", 0.0));
    }
    CHECK(!arma::approx_equal(xs[0].draws, xs[1].draws, "absdiff", 1e-12));

    // a single chain reduces to run_chain
    McmcConfig one = cfg;
    one.chains = 1;
    const auto x1 = run_chains(model, one);
    const ChainOutput direct = run_chain(model, one, 0);
    CHECK(arma::approx_equal(x1[0].draws, direct.draws, "absdiff", 0.0));
}

TEST_CASE("chain failure is reported per chain") {
    const auto ds = small_gaussian_ds(3, 4, 7);
    GibbsModel model(ds, Priors{}, 5);
    McmcConfig cfg;
    cfg.chains = 2;
    cfg.iterations = 10;
    cfg.burn_in = 5;
    cfg.thin = 1;
    cfg.K = 5;  // K > m: initialize throws inside each chain
    const auto outs = run_chains(model, cfg);
    REQUIRE(outs.size() == 2);
    for (const auto& o : outs) {
        CHECK(!o.ok());
        CHECK(o.error.find("K exceeds") != std::string::npos);
    }
}

TEST_CASE("no adaptation after burn-in: proposal scales frozen") {
    auto ds = make_design(30, 5, 1, {{"y", Family::Zip, ZipVariant::YauLee}}, 8);
    RngStream fill(9, 1);
    for (arma::uword i = 0; i < 30; ++i)
        for (arma::uword j = 0; j < 5; ++j)
            ds.blocks[i][0].y(j) =
                fill.uniform() < 0.3 ? 0.0 : static_cast<double>(fill.poisson(2.0));
    GibbsModel model(ds, Priors{}, 1);
    McmcConfig cfg;
    cfg.chains = 1;
    cfg.iterations = 400;
    cfg.burn_in = 200;
    cfg.thin = 2;
    cfg.K = 1;
    const ChainOutput out = run_chain(model, cfg, 0);
    REQUIRE(out.ok());
    REQUIRE(!out.mh_scale_post_burnin.empty());
    for (const auto& [k, v] : out.mh_scale_post_burnin) {
        REQUIRE(out.mh_scale_final.count(k) == 1);
        CHECK(out.mh_scale_final.at(k) == v);
    }
    // adaptation did move the scale away from its initial value during burn-in
    const double init_scale = std::log(MhOptions{}.init_scale);
    bool moved = false;
    for (const auto& [k, v] : out.mh_scale_post_burnin) moved = moved || v != init_scale;
    CHECK(moved);
}

TEST_CASE("toy conjugate model: posterior mean of beta matches the closed form") {
    // gaussian family, K = 1, mixture and variances frozen at their initial
    // values so (beta, gamma) is jointly gaussian with a known marginal
    const arma::uword m = 25, n = 6;
    auto ds = make_design(m, n, 2, {{"y", Family::Gaussian, ZipVariant::YauLee}}, 10);
    RngStream fill(11, 1);
    const arma::vec beta_true{0.8, -0.4};
    const double psi_fixed = 0.8, sigma2_fixed = 0.6;
    for (arma::uword i = 0; i < m; ++i) {
        const double g = std::sqrt(psi_fixed) * fill.normal();
        for (arma::uword j = 0; j < n; ++j)
            ds.blocks[i][0].y(j) = arma::dot(ds.blocks[i][0].X.row(j), beta_true) +
                                   ds.blocks[i][0].z(j, 0) * g +
                                   std::sqrt(sigma2_fixed) * fill.normal();
    }
    Priors priors;
    priors.psi_df_extra = 2.0;
    priors.psi_scale = psi_fixed;        // initialize() pins Psi = psi_scale * I
    priors.sigma2_shape = 2.0;
    priors.sigma2_rate = sigma2_fixed;   // initialize() pins sigma2 = rate/(shape-1)
    priors.balasso_a = 2.0;
    priors.balasso_b = 1.0;              // tau2 init = 2b/a = 1 (fixed prior variance 1)
    GibbsModel model(ds, priors, 1);

    McmcConfig cfg;
    cfg.chains = 1;
    cfg.iterations = 12000;
    cfg.burn_in = 2000;
    cfg.thin = 1;
    cfg.K = 1;
    cfg.store_membership = false;
    cfg.flags.sigma2 = false;
    cfg.flags.shrinkage = false;
    cfg.flags.allocations = false;
    cfg.flags.mixing = false;
    cfg.flags.cluster_params = false;
    const ChainOutput out = run_chain(model, cfg, 0);
    REQUIRE(out.ok());

    // closed-form GLS posterior: V_i = sigma2 I + psi z z'
    arma::mat prec = arma::eye(2, 2);  // prior precision diag(1/tau2) = I
    arma::vec lin(2, arma::fill::zeros);
    for (arma::uword i = 0; i < m; ++i) {
        const auto& b = ds.blocks[i][0];
        const arma::mat V =
            sigma2_fixed * arma::eye(n, n) + psi_fixed * b.z * b.z.t();
        const arma::mat Vi = arma::inv_sympd(V);
        prec += b.X.t() * Vi * b.X;
        lin += b.X.t() * Vi * b.y;
    }
    const arma::vec post_mean = arma::solve(prec, lin);
    const arma::mat post_cov = arma::inv_sympd(prec);
    const arma::vec post_sd = arma::sqrt(post_cov.diag());

    for (int j = 0; j < 2; ++j) {
        const arma::vec col = out.column("beta.y." + std::string("main") + ".x" +
                                         std::to_string(j + 1));
        // 3 x MCSE with a conservative effective sample size of n/20
        const double mcse = post_sd(j) / std::sqrt(out.draws.n_rows / 20.0);
        CHECK(std::fabs(arma::mean(col) - post_mean(j)) < 3.0 * mcse);
    }
}

TEST_CASE("checkpoints round-trip the full sweep state") {
    SimScenario sc = SimScenario::reference_design(12);
    sc.m = 25;
    sc.features.push_back({"y3", Family::Zip, ZipVariant::YauLee,
                           arma::vec{0.05, 0.05, 0.0, 0.0}, arma::vec{}, 1.0, 0.4});
    sc.component_means = {arma::vec(3, arma::fill::zeros), arma::vec(3, arma::fill::ones)};
    const SimResult sim = simulate_dataset(sc);
    GibbsModel model(sim.dataset, Priors{}, 2);
    RngStream rng(13, 0);
    SweepState s = model.initialize(rng);
    for (int t = 0; t < 3; ++t) model.sweep(s, rng, true);

    const std::string path = std::filesystem::temp_directory_path() / "zilcm_ck_test.bin";
    save_checkpoint(path, {1, 3, 0, s, rng.state()}, model);
    const Checkpoint ck = load_checkpoint(path, model);
    CHECK(ck.iteration == 3);
    CHECK(arma::approx_equal(model.flatten(ck.state), model.flatten(s), "absdiff", 0.0));
    CHECK(arma::approx_equal(ck.state.gamma, s.gamma, "absdiff", 0.0));
    CHECK(arma::all(ck.state.mixture.C == s.mixture.C));
    // resuming from the restored rng state reproduces the original stream
    RngStream resumed(0, 0);
    resumed.restore(ck.rng_state);
    CHECK(resumed.next_u64() == rng.next_u64());
    std::filesystem::remove(path);

    // corrupted magic header is rejected
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTACKPT garbage";
    }
    CHECK_THROWS(load_checkpoint(path, model));
    std::filesystem::remove(path);
}

TEST_CASE("engine writes periodic checkpoints when configured") {
    const auto ds = small_gaussian_ds(6, 4, 14);
    GibbsModel model(ds, Priors{}, 1);
    McmcConfig cfg;
    cfg.chains = 1;
    cfg.iterations = 20;
    cfg.burn_in = 10;
    cfg.thin = 2;
    cfg.K = 1;
    const auto dir = std::filesystem::temp_directory_path() / "zilcm_ck_dir";
    std::filesystem::create_directories(dir);
    cfg.checkpoint_dir = dir.string();
    cfg.checkpoint_every = 10;
    const ChainOutput out = run_chain(model, cfg, 0);
    REQUIRE(out.ok());
    CHECK(std::filesystem::exists(dir / "checkpoint-chain0.bin"));
    const Checkpoint ck = load_checkpoint((dir / "checkpoint-chain0.bin").string(), model);
    CHECK(ck.iteration == 20);
    std::filesystem::remove_all(dir);
}
