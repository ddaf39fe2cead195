#include "zilcm/engine.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace zilcm {

void McmcConfig::validate() const {
    if (chains < 1) throw std::invalid_argument("McmcConfig: chains must be >= 1");
    if (thin < 1) throw std::invalid_argument("McmcConfig: thin must be >= 1");
    if (burn_in >= iterations)
        throw std::invalid_argument("McmcConfig: burn_in must be smaller than iterations");
    if ((iterations - burn_in) % thin != 0)
        throw std::invalid_argument(
            "McmcConfig: (iterations - burn_in) must be divisible by thin so the stored draw "
            "count is exact");
    if (K < 1) throw std::invalid_argument("McmcConfig: K must be >= 1");
}

arma::uword ChainOutput::param_index(const std::string& name) const {
    for (arma::uword j = 0; j < param_names.size(); ++j)
        if (param_names[j] == name) return j;
    throw std::out_of_range("ChainOutput: unknown parameter '" + name + "'");
}

arma::vec ChainOutput::column(const std::string& name) const {
    return draws.col(param_index(name));
}

namespace {

std::map<std::string, double> collect_mh_scales(const GibbsModel& model, const SweepState& s) {
    std::map<std::string, double> out;
    for (arma::uword idx = 0; idx < s.parts.size(); ++idx) {
        const auto& p = s.parts[idx];
        if (p.mh_proposed > 0 || p.part == Part::Count)
            out["beta." + model.dataset().features[p.feature].name + "." + part_name(p.part)] =
                p.mh_log_scale;
    }
    if (model.has_poisson() && s.gamma_mh_log_scale.n_elem > 0)
        out["gamma.mh.mean_log_scale"] = arma::mean(s.gamma_mh_log_scale);
    return out;
}

}  // namespace

ChainOutput run_chain(const GibbsModel& model, const McmcConfig& cfg, arma::uword chain_id) {
    cfg.validate();
    if (cfg.K != model.K())
        throw std::invalid_argument("run_chain: config K does not match the model's K");
    ChainOutput out;
    out.chain_id = chain_id;
    out.K = cfg.K;
    out.param_names = model.param_names();

    const arma::uword n_store = cfg.stored_draws();
    const arma::uword m = model.dataset().m();
    const arma::uword q = model.layout().q;

    out.draws.set_size(n_store, out.param_names.size());
    out.deviance.set_size(n_store);
    out.allocations.set_size(n_store, m);
    if (cfg.store_membership) out.membership.reserve(n_store);
    if (cfg.store_random_effects) out.gamma_draws.reserve(n_store);
    out.gamma_mean.zeros(m, q);
    out.sweep_seconds.set_size(cfg.iterations);

    RngStream rng(cfg.seed, chain_id);
    SweepState state;

    auto checkpoint_path = [&](const char* tag) {
        return cfg.checkpoint_dir + "/checkpoint-chain" + std::to_string(chain_id) + tag + ".bin";
    };

    arma::uword stored = 0;
    try {
        state = model.initialize(rng, cfg.init);
        for (arma::uword it = 1; it <= cfg.iterations; ++it) {
            const bool adapt = it <= cfg.burn_in;  // adaptation frozen after burn-in
            const auto t0 = std::chrono::steady_clock::now();
            auto timing = model.sweep(state, rng, adapt, cfg.flags);
            out.sweep_seconds(it - 1) =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            for (const auto& [k, v] : timing) out.block_seconds[k] += v;

            if (it == cfg.burn_in) out.mh_scale_post_burnin = collect_mh_scales(model, state);

            if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
                out.draws.row(stored) = model.flatten(state).t();
                out.deviance(stored) = model.deviance(state);
                out.allocations.row(stored) = state.mixture.C.t();
                if (cfg.store_membership)
                    out.membership.push_back(model.allocation_probabilities(state));
                if (cfg.store_random_effects) out.gamma_draws.push_back(state.gamma);
                out.gamma_mean += state.gamma;
                ++stored;
            }

            if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
                it % cfg.checkpoint_every == 0) {
                save_checkpoint(checkpoint_path(""), {1, it, chain_id, state, rng.state()}, model);
            }
        }
    } catch (const std::exception& e) {
        out.error = e.what();
        if (!cfg.checkpoint_dir.empty()) {
            try {
                save_checkpoint(checkpoint_path("-crash"), {1, 0, chain_id, state, rng.state()},
                                model);
            } catch (...) {
                // the crash snapshot is best effort
            }
        }
        return out;
    }

    if (stored > 0) out.gamma_mean /= static_cast<double>(stored);
    out.mh_scale_final = collect_mh_scales(model, state);
    for (const auto& p : state.parts) {
        if (p.mh_proposed > 0)
            out.acceptance["beta." + model.dataset().features[p.feature].name + "." +
                           part_name(p.part)] =
                static_cast<double>(p.mh_accepted) / static_cast<double>(p.mh_proposed);
    }
    if (model.has_poisson()) {
        const double tot = arma::accu(state.gamma_mh_proposed);
        if (tot > 0)
            out.acceptance["gamma.count_slices"] = arma::accu(state.gamma_mh_accepted) / tot;
    }

    if (!cfg.checkpoint_dir.empty())
        save_checkpoint(checkpoint_path(""), {1, cfg.iterations, chain_id, state, rng.state()},
                        model);
    return out;
}

std::vector<ChainOutput> run_chains(const GibbsModel& model, const McmcConfig& cfg) {
    cfg.validate();
    std::vector<ChainOutput> outputs(cfg.chains);
    arma::uword workers = cfg.threads == 0 ? std::thread::hardware_concurrency() : cfg.threads;
    if (workers == 0) workers = 1;
    workers = std::min<arma::uword>(workers, cfg.chains);

    if (workers <= 1) {
        for (arma::uword c = 0; c < cfg.chains; ++c) outputs[c] = run_chain(model, cfg, c);
        return outputs;
    }

    std::atomic<arma::uword> next{0};
    auto worker = [&]() {
        for (;;) {
            const arma::uword c = next.fetch_add(1);
            if (c >= cfg.chains) return;
            try {
                outputs[c] = run_chain(model, cfg, c);
            } catch (const std::exception& e) {
                outputs[c].chain_id = c;
                outputs[c].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (arma::uword t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return outputs;
}

// ---------------------------------------------------------------------------
// checkpoints: magic header + version + json payload

namespace {

constexpr char kMagic[8] = {'Z', 'L', 'C', 'M', 'C', 'K', 'P', 'T'};

nlohmann::json state_to_json(const SweepState& s) {
    nlohmann::json j;
    j["pi"] = std::vector<double>(s.mixture.pi.begin(), s.mixture.pi.end());
    j["C"] = std::vector<arma::uword>(s.mixture.C.begin(), s.mixture.C.end());
    j["K"] = s.mixture.K;
    auto mat_to = [](const arma::mat& m) {
        return nlohmann::json{{"rows", m.n_rows},
                              {"cols", m.n_cols},
                              {"data", std::vector<double>(m.begin(), m.end())}};
    };
    for (const auto& mu : s.mixture.mu) j["mu"].push_back(std::vector<double>(mu.begin(), mu.end()));
    for (const auto& psi : s.mixture.psi) j["psi"].push_back(mat_to(psi));
    j["gamma"] = mat_to(s.gamma);
    for (const auto& p : s.parts) {
        nlohmann::json pj;
        pj["beta"] = std::vector<double>(p.beta.begin(), p.beta.end());
        pj["tau2"] = std::vector<double>(p.shrink.tau2.begin(), p.shrink.tau2.end());
        pj["lambda2"] = std::vector<double>(p.shrink.lambda2.begin(), p.shrink.lambda2.end());
        pj["sigma2"] = p.sigma2;
        pj["mh_log_scale"] = p.mh_log_scale;
        j["parts"].push_back(pj);
    }
    auto nested = [](const std::vector<std::vector<arma::vec>>& v) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& per_feature : v) {
            nlohmann::json fj = nlohmann::json::array();
            for (const auto& x : per_feature) fj.push_back(std::vector<double>(x.begin(), x.end()));
            out.push_back(fj);
        }
        return out;
    };
    j["ystar"] = nested(s.ystar);
    j["omega"] = nested(s.omega);
    j["zeros"] = nested(s.zeros);
    j["gamma_mh_log_scale"] =
        std::vector<double>(s.gamma_mh_log_scale.begin(), s.gamma_mh_log_scale.end());
    return j;
}

void state_from_json(const nlohmann::json& j, SweepState& s) {
    auto to_vec = [](const nlohmann::json& a) {
        arma::vec v(a.size());
        for (arma::uword i = 0; i < v.n_elem; ++i) v(i) = a[i].get<double>();
        return v;
    };
    auto to_mat = [](const nlohmann::json& mj) {
        arma::mat m(mj["rows"].get<arma::uword>(), mj["cols"].get<arma::uword>());
        const auto& d = mj["data"];
        for (arma::uword i = 0; i < m.n_elem; ++i) m(i) = d[i].get<double>();
        return m;
    };
    s.mixture.K = j["K"].get<arma::uword>();
    s.mixture.pi = to_vec(j["pi"]);
    const auto& cj = j["C"];
    s.mixture.C.set_size(cj.size());
    for (arma::uword i = 0; i < s.mixture.C.n_elem; ++i) s.mixture.C(i) = cj[i].get<arma::uword>();
    s.mixture.mu.clear();
    for (const auto& mj : j["mu"]) s.mixture.mu.push_back(to_vec(mj));
    s.mixture.psi.clear();
    for (const auto& pj : j["psi"]) s.mixture.psi.push_back(to_mat(pj));
    s.gamma = to_mat(j["gamma"]);
    for (arma::uword idx = 0; idx < s.parts.size(); ++idx) {
        const auto& pj = j["parts"][idx];
        s.parts[idx].beta = to_vec(pj["beta"]);
        s.parts[idx].shrink.tau2 = to_vec(pj["tau2"]);
        s.parts[idx].shrink.lambda2 = to_vec(pj["lambda2"]);
        s.parts[idx].sigma2 = pj["sigma2"].get<double>();
        s.parts[idx].mh_log_scale = pj["mh_log_scale"].get<double>();
    }
    auto fill_nested = [&](const nlohmann::json& a, std::vector<std::vector<arma::vec>>& v) {
        for (arma::uword r = 0; r < v.size() && r < a.size(); ++r)
            for (arma::uword i = 0; i < v[r].size(); ++i) v[r][i] = to_vec(a[r][i]);
    };
    fill_nested(j["ystar"], s.ystar);
    fill_nested(j["omega"], s.omega);
    fill_nested(j["zeros"], s.zeros);
    s.gamma_mh_log_scale = to_vec(j["gamma_mh_log_scale"]);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck, const GibbsModel&) {
    nlohmann::json j;
    j["version"] = ck.version;
    j["iteration"] = ck.iteration;
    j["chain_id"] = ck.chain_id;
    j["rng"] = {ck.rng_state.s[0], ck.rng_state.s[1], ck.rng_state.s[2], ck.rng_state.s[3]};
    j["state"] = state_to_json(ck.state);
    const std::string payload = j.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
        f.write(kMagic, sizeof(kMagic));
        const std::uint32_t version = ck.version;
        const std::uint64_t len = payload.size();
        f.write(reinterpret_cast<const char*>(&version), sizeof(version));
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!f) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const GibbsModel& model) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic header in " + path);
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&version), sizeof(version));
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f || version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    std::string payload(len, '\0');
    f.read(payload.data(), static_cast<std::streamsize>(len));
    if (!f) throw std::runtime_error("load_checkpoint: truncated payload");
    const nlohmann::json j = nlohmann::json::parse(payload);

    Checkpoint ck;
    ck.version = version;
    ck.iteration = j["iteration"].get<arma::uword>();
    ck.chain_id = j["chain_id"].get<arma::uword>();
    for (int i = 0; i < 4; ++i) ck.rng_state.s[i] = j["rng"][i].get<std::uint64_t>();

    // start from a structurally matching state, then overwrite values
    RngStream scratch(0, 0);
    ck.state = model.initialize(scratch, InitStrategy::Random);
    state_from_json(j["state"], ck.state);
    return ck;
}

}  // namespace zilcm
