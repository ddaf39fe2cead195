#include "zilcm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "zilcm/math.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace zilcm {

// ---------------------------------------------------------------------------
// small utilities

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void atomic_write_file(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

namespace {

double parse_double_strict(const std::string& tok, const std::string& context) {
    if (tok.empty()) throw DataError("missing cell " + context);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v))
        throw DataError("non-numeric cell '" + tok + "' " + context);
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

arma::uword levenshtein(const std::string& a, const std::string& b) {
    std::vector<arma::uword> prev(b.size() + 1), cur(b.size() + 1);
    for (arma::uword j = 0; j <= b.size(); ++j) prev[j] = j;
    for (arma::uword i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (arma::uword j = 1; j <= b.size(); ++j) {
            const arma::uword sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) != known.end()) continue;
        std::string best;
        arma::uword best_d = 1000;
        for (const auto& k : known) {
            const arma::uword d = levenshtein(it.key(), k);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        std::string msg = "unknown key '" + it.key() + "' in " + where;
        if (best_d <= 3) msg += " (did you mean '" + best + "'?)";
        throw ConfigError(msg);
    }
}

Family family_from_name(const std::string& s) {
    if (s == "gaussian" || s == "normal") return Family::Gaussian;
    if (s == "tobit") return Family::Tobit;
    if (s == "twopart" || s == "two-part") return Family::TwoPart;
    if (s == "zip") return Family::Zip;
    throw ConfigError("unknown family '" + s + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// dataset CSV

LongitudinalDataset parse_dataset_csv(const std::string& path, const DatasetSchema& schema) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open dataset file '" + path + "'");

    std::string line;
    if (!std::getline(f, line)) throw DataError("dataset file '" + path + "' is empty");
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "id" || header[1] != "wave")
        throw DataError("dataset header must start with 'id,wave'");

    std::map<std::string, arma::uword> col;
    for (arma::uword j = 0; j < header.size(); ++j) {
        if (col.count(header[j])) throw DataError("duplicate column '" + header[j] + "'");
        col[header[j]] = j;
    }

    std::set<std::string> reserved{"id", "wave"};
    for (const auto& fspec : schema.features) {
        if (!col.count(fspec.name)) throw DataError("feature column '" + fspec.name + "' missing");
        reserved.insert(fspec.name);
    }
    for (const auto& zn : schema.z_names) {
        if (!col.count(zn)) throw DataError("random-effect column '" + zn + "' missing");
        reserved.insert(zn);
    }
    std::vector<std::string> covariates = schema.covariates;
    if (covariates.empty()) {
        for (const auto& h : header)
            if (!reserved.count(h)) covariates.push_back(h);
    } else {
        for (const auto& c : covariates)
            if (!col.count(c)) throw DataError("covariate column '" + c + "' missing");
    }
    if (schema.intercept &&
        std::find(covariates.begin(), covariates.end(), "intercept") != covariates.end())
        throw DataError("dataset already has a column named 'intercept'");

    struct Row {
        long wave;
        std::vector<double> values;  // full row, indexed like header
    };
    std::vector<std::string> ids;
    std::map<std::string, arma::uword> id_index;
    std::vector<std::vector<Row>> rows;

    arma::uword lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto toks = split_csv_line(line);
        if (toks.size() != header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(toks.size()));
        Row row;
        row.values.resize(toks.size(), 0.0);
        const std::string& id = toks[0];
        if (id.empty()) throw DataError("line " + std::to_string(lineno) + ": empty id");
        const std::string ctx_wave = "(line " + std::to_string(lineno) + ", column wave)";
        const double wv = parse_double_strict(toks[1], ctx_wave);
        if (std::floor(wv) != wv)
            throw DataError("line " + std::to_string(lineno) + ": wave must be an integer");
        row.wave = static_cast<long>(wv);
        for (arma::uword j = 2; j < toks.size(); ++j)
            row.values[j] = parse_double_strict(
                toks[j], "(line " + std::to_string(lineno) + ", column " + header[j] + ")");

        auto it = id_index.find(id);
        if (it == id_index.end()) {
            it = id_index.emplace(id, ids.size()).first;
            ids.push_back(id);
            rows.emplace_back();
        }
        for (const auto& existing : rows[it->second])
            if (existing.wave == row.wave)
                throw DataError("duplicate (id, wave) pair (" + id + ", " +
                                std::to_string(row.wave) + ")");
        rows[it->second].push_back(std::move(row));
    }
    if (ids.empty()) throw DataError("dataset '" + path + "' has no data rows");

    LongitudinalDataset ds;
    ds.ids = ids;
    ds.z_names = schema.z_names;
    ds.features = schema.features;
    ds.covariate_names = covariates;
    if (schema.intercept)
        ds.covariate_names.insert(ds.covariate_names.begin(), "intercept");

    const arma::uword m = ids.size(), R = schema.features.size();
    const arma::uword P = ds.covariate_names.size();
    ds.blocks.resize(m);
    ds.waves.resize(m);
    for (arma::uword i = 0; i < m; ++i) {
        auto& rws = rows[i];
        std::stable_sort(rws.begin(), rws.end(),
                         [](const Row& a, const Row& b) { return a.wave < b.wave; });
        const arma::uword n = rws.size();
        ds.waves[i].set_size(n);
        arma::mat X(n, P), z(n, schema.z_names.size());
        for (arma::uword j = 0; j < n; ++j) {
            ds.waves[i](j) = rws[j].wave;
            arma::uword pc = 0;
            if (schema.intercept) X(j, pc++) = 1.0;
            for (const auto& cv : covariates) X(j, pc++) = rws[j].values[col.at(cv)];
            for (arma::uword zc = 0; zc < schema.z_names.size(); ++zc)
                z(j, zc) = rws[j].values[col.at(schema.z_names[zc])];
        }
        ds.blocks[i].resize(R);
        for (arma::uword r = 0; r < R; ++r) {
            auto& b = ds.blocks[i][r];
            b.X = X;
            b.z = z;
            b.y.set_size(n);
            for (arma::uword j = 0; j < n; ++j)
                b.y(j) = rws[j].values[col.at(schema.features[r].name)];
        }
    }
    return ds;
}

void write_dataset_csv(const std::string& path, const LongitudinalDataset& ds) {
    std::ostringstream os;
    os << "id,wave";
    for (const auto& zn : ds.z_names) os << "," << zn;
    std::vector<arma::uword> cov_cols;
    for (arma::uword j = 0; j < ds.covariate_names.size(); ++j) {
        if (ds.covariate_names[j] == "intercept") continue;
        cov_cols.push_back(j);
        os << "," << ds.covariate_names[j];
    }
    for (const auto& fspec : ds.features) os << "," << fspec.name;
    os << "\n";
    for (arma::uword i = 0; i < ds.m(); ++i) {
        const arma::uword n = ds.blocks[i][0].y.n_elem;
        for (arma::uword j = 0; j < n; ++j) {
            os << ds.ids[i] << "," << ds.waves[i](j);
            for (arma::uword zc = 0; zc < ds.z_names.size(); ++zc)
                os << "," << format_double(ds.blocks[i][0].z(j, zc));
            for (arma::uword c : cov_cols) os << "," << format_double(ds.blocks[i][0].X(j, c));
            for (arma::uword r = 0; r < ds.R(); ++r)
                os << "," << format_double(ds.blocks[i][r].y(j));
            os << "\n";
        }
    }
    atomic_write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// run configuration

namespace {

DatasetSchema schema_from_json(const json& j) {
    DatasetSchema schema;
    if (!j.contains("features") || !j["features"].is_object() || j["features"].empty())
        throw ConfigError("config needs a non-empty 'features' map (column -> family)");
    for (auto it = j["features"].begin(); it != j["features"].end(); ++it) {
        FeatureSpec spec;
        spec.name = it.key();
        if (it.value().is_string()) {
            spec.family = family_from_name(it.value().get<std::string>());
        } else if (it.value().is_object()) {
            reject_unknown_keys(it.value(), {"family", "variant"}, "features." + it.key());
            spec.family = family_from_name(it.value().at("family").get<std::string>());
            if (it.value().contains("variant")) {
                const std::string v = it.value()["variant"].get<std::string>();
                if (v == "hall")
                    spec.zip_variant = ZipVariant::Hall;
                else if (v == "yaulee" || v == "yau-lee")
                    spec.zip_variant = ZipVariant::YauLee;
                else
                    throw ConfigError("unknown ZIP variant '" + v + "'");
            }
        } else {
            throw ConfigError("features." + it.key() + " must be a family name or an object");
        }
        schema.features.push_back(spec);
    }
    // deterministic feature order regardless of JSON object ordering
    std::sort(schema.features.begin(), schema.features.end(),
              [](const FeatureSpec& a, const FeatureSpec& b) { return a.name < b.name; });
    if (j.contains("random_effects"))
        schema.z_names = j["random_effects"].get<std::vector<std::string>>();
    if (j.contains("covariates"))
        schema.covariates = j["covariates"].get<std::vector<std::string>>();
    if (j.contains("intercept")) schema.intercept = j["intercept"].get<bool>();
    return schema;
}

Priors priors_from_json(const json& j) {
    Priors p;
    if (!j.contains("priors")) return p;
    const json& pj = j["priors"];
    reject_unknown_keys(pj,
                        {"mu_var", "psi_df_extra", "psi_scale", "dirichlet_alpha", "sigma2_shape",
                         "sigma2_rate", "balasso_a", "balasso_b", "unshrunk_var"},
                        "priors");
    if (pj.contains("mu_var")) p.mu_prior_var = pj["mu_var"].get<double>();
    if (pj.contains("psi_df_extra")) p.psi_df_extra = pj["psi_df_extra"].get<double>();
    if (pj.contains("psi_scale")) p.psi_scale = pj["psi_scale"].get<double>();
    if (pj.contains("dirichlet_alpha")) p.dirichlet_alpha = pj["dirichlet_alpha"].get<double>();
    if (pj.contains("sigma2_shape")) p.sigma2_shape = pj["sigma2_shape"].get<double>();
    if (pj.contains("sigma2_rate")) p.sigma2_rate = pj["sigma2_rate"].get<double>();
    if (pj.contains("balasso_a")) p.balasso_a = pj["balasso_a"].get<double>();
    if (pj.contains("balasso_b")) p.balasso_b = pj["balasso_b"].get<double>();
    if (pj.contains("unshrunk_var")) p.unshrunk_var = pj["unshrunk_var"].get<double>();
    return p;
}

json load_json(const std::string& path, const char* what) {
    std::ifstream f(path);
    if (!f) throw ConfigError(std::string("cannot open ") + what + " file '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string(what) + " file '" + path + "' is not valid JSON: " +
                          e.what());
    }
    return j;
}

}  // namespace

RunConfig parse_config(const std::string& path) {
    const json j = load_json(path, "config");
    reject_unknown_keys(
        j,
        {"dataset", "features", "covariates", "random_effects", "intercept", "K", "K_range",
         "chains", "iterations", "burn_in", "thin", "seed", "init", "estimator", "output",
         "threads", "checkpoint_every", "ped_max_pairs", "priors", "store_random_effects"},
        "config");

    RunConfig cfg;
    if (!j.contains("dataset")) throw ConfigError("config needs a 'dataset' path");
    cfg.dataset_path = j["dataset"].get<std::string>();
    cfg.schema = schema_from_json(j);
    cfg.priors = priors_from_json(j);

    if (j.contains("K")) cfg.k = j["K"].get<arma::uword>();
    if (j.contains("K_range")) {
        const auto range = j["K_range"].get<std::vector<arma::uword>>();
        if (range.size() == 2 && range[0] < range[1]) {
            for (arma::uword k = range[0]; k <= range[1]; ++k) cfg.k_range.push_back(k);
        } else {
            cfg.k_range = range;
        }
        if (cfg.k_range.empty()) throw ConfigError("K_range must be non-empty");
        for (arma::uword k : cfg.k_range)
            if (k < 1) throw ConfigError("each K must be >= 1");
    } else {
        cfg.k_range = {2, 3, 4, 5};
    }

    if (j.contains("chains")) cfg.mcmc.chains = j["chains"].get<arma::uword>();
    if (j.contains("iterations")) cfg.mcmc.iterations = j["iterations"].get<arma::uword>();
    if (j.contains("burn_in")) cfg.mcmc.burn_in = j["burn_in"].get<arma::uword>();
    if (j.contains("thin")) cfg.mcmc.thin = j["thin"].get<arma::uword>();
    if (j.contains("seed")) cfg.mcmc.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("threads")) cfg.mcmc.threads = j["threads"].get<arma::uword>();
    if (j.contains("checkpoint_every"))
        cfg.mcmc.checkpoint_every = j["checkpoint_every"].get<arma::uword>();
    if (j.contains("store_random_effects"))
        cfg.mcmc.store_random_effects = j["store_random_effects"].get<bool>();
    if (j.contains("init")) {
        const std::string s = j["init"].get<std::string>();
        if (s == "kmeans")
            cfg.mcmc.init = InitStrategy::KMeans;
        else if (s == "random")
            cfg.mcmc.init = InitStrategy::Random;
        else
            throw ConfigError("unknown init strategy '" + s + "' (use 'kmeans' or 'random')");
    }
    if (j.contains("estimator"))
        cfg.estimator = ped_estimator_from_name(j["estimator"].get<std::string>());
    if (j.contains("ped_max_pairs")) cfg.ped_max_pairs = j["ped_max_pairs"].get<arma::uword>();
    if (j.contains("output")) cfg.output_dir = j["output"].get<std::string>();

    // environment overrides: seed and output directory only
    if (const char* env_seed = std::getenv("ZILCM_SEED")) {
        try {
            cfg.mcmc.seed = std::stoull(env_seed);
        } catch (...) {
            throw ConfigError("ZILCM_SEED is not an integer");
        }
    }
    if (const char* env_out = std::getenv("ZILCM_OUT")) cfg.output_dir = env_out;

    try {
        cfg.mcmc.K = cfg.k.value_or(cfg.k_range.front());
        cfg.mcmc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

SimScenario parse_scenario(const std::string& path) {
    const json j = load_json(path, "scenario");
    reject_unknown_keys(j, {"m", "timepoints", "seed", "mixture", "covariates", "features"},
                        "scenario");
    SimScenario sc = SimScenario::reference_design(1);
    if (j.contains("m")) sc.m = j["m"].get<arma::uword>();
    if (j.contains("timepoints")) sc.timepoints = j["timepoints"].get<arma::uword>();
    if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("mixture")) {
        const json& mj = j["mixture"];
        reject_unknown_keys(mj, {"weights", "means", "scales"}, "scenario.mixture");
        const auto w = mj.at("weights").get<std::vector<double>>();
        sc.K = w.size();
        sc.weights = arma::vec(w);
        sc.component_means.clear();
        for (const auto& mv : mj.at("means"))
            sc.component_means.push_back(arma::vec(mv.get<std::vector<double>>()));
        sc.component_scales = mj.at("scales").get<std::vector<double>>();
    }
    if (j.contains("covariates")) {
        sc.covariates.clear();
        for (const auto& cj : j["covariates"]) {
            reject_unknown_keys(cj, {"name", "mean", "sd"}, "scenario.covariates[]");
            CovariateSpec cs;
            cs.name = cj.at("name").get<std::string>();
            if (cj.contains("mean")) cs.mean = cj["mean"].get<double>();
            if (cj.contains("sd")) cs.sd = cj["sd"].get<double>();
            sc.covariates.push_back(cs);
        }
    }
    if (j.contains("features")) {
        sc.features.clear();
        for (const auto& fj : j["features"]) {
            reject_unknown_keys(
                fj, {"name", "family", "variant", "beta", "beta_zero", "sigma", "zero_prob"},
                "scenario.features[]");
            SimFeature f;
            f.name = fj.at("name").get<std::string>();
            f.family = family_from_name(fj.at("family").get<std::string>());
            if (fj.contains("variant"))
                f.zip_variant = fj["variant"].get<std::string>() == "hall" ? ZipVariant::Hall
                                                                           : ZipVariant::YauLee;
            f.beta = arma::vec(fj.at("beta").get<std::vector<double>>());
            if (fj.contains("beta_zero"))
                f.beta_zero = arma::vec(fj["beta_zero"].get<std::vector<double>>());
            if (fj.contains("sigma")) f.sigma = fj["sigma"].get<double>();
            if (fj.contains("zero_prob")) f.zero_prob = fj["zero_prob"].get<double>();
            sc.features.push_back(f);
        }
    }
    try {
        sc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return sc;
}

// ---------------------------------------------------------------------------
// fitting pipeline

FitResult run_fit(const RunConfig& config, const LongitudinalDataset& ds, arma::uword K) {
    FitResult fit;
    fit.validation = validate_dataset(ds);
    if (!fit.validation.ok()) {
        std::string msg = "dataset validation failed:";
        for (const auto& e : fit.validation.errors) msg += "\n  - " + e;
        throw DataError(msg);
    }

    GibbsModel model(ds, config.priors, K);
    McmcConfig mc = config.mcmc;
    mc.K = K;
    fit.chains = run_chains(model, mc);

    arma::uword survivors = 0;
    std::string errors;
    for (const auto& c : fit.chains) {
        if (c.ok())
            ++survivors;
        else
            errors += "\n  chain " + std::to_string(c.chain_id) + ": " + c.error;
    }
    if (survivors == 0) throw SamplerError("all chains failed:" + errors);

    relabel(fit.chains, model);
    fit.diagnostics = compute_diagnostics(fit.chains);
    fit.membership = posterior_membership(fit.chains, ds.m(), K);
    fit.ped_twopd = compute_ped(fit.chains, model, PedEstimator::TwoPd, config.ped_max_pairs);
    if (survivors >= 2)
        fit.ped_paired =
            compute_ped(fit.chains, model, PedEstimator::PairedChain, config.ped_max_pairs);
    if (config.estimator == PedEstimator::PairedChain && survivors >= 2 &&
        !fit.ped_paired.weight_warning) {
        fit.ped = fit.ped_paired;
    } else {
        // robust fallback: one surviving chain or degenerate importance weights
        fit.ped = fit.ped_twopd;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// output writers

namespace {

double quantile_type7(arma::vec sorted, double p) {
    const arma::uword n = sorted.n_elem;
    if (n == 1) return sorted(0);
    const double h = (static_cast<double>(n) - 1.0) * p;
    const arma::uword lo = static_cast<arma::uword>(std::floor(h));
    const arma::uword hi = std::min(lo + 1, n - 1);
    return sorted(lo) + (h - lo) * (sorted(hi) - sorted(lo));
}

struct ParamSummary {
    double mean, sd, median, q025, q975;
};

ParamSummary summarize_column(const std::vector<const ChainOutput*>& chains, arma::uword col) {
    arma::uword total = 0;
    for (const auto* c : chains) total += c->draws.n_rows;
    arma::vec pooled(total);
    arma::uword at = 0;
    for (const auto* c : chains) {
        pooled.subvec(at, at + c->draws.n_rows - 1) = c->draws.col(col);
        at += c->draws.n_rows;
    }
    ParamSummary s{};
    s.mean = arma::mean(pooled);
    s.sd = pooled.n_elem > 1 ? arma::stddev(pooled) : 0.0;
    arma::vec sorted = arma::sort(pooled);
    s.median = quantile_type7(sorted, 0.5);
    s.q025 = quantile_type7(sorted, 0.025);
    s.q975 = quantile_type7(sorted, 0.975);
    return s;
}

std::string ped_row(const PedReport& r) {
    std::ostringstream os;
    os << r.k << "," << format_double(r.dbar) << "," << format_double(r.popt) << ","
       << format_double(r.ped) << "," << ped_estimator_name(r.estimator) << ","
       << (r.weight_warning ? 1 : 0) << "\n";
    return os.str();
}

json ped_json(const PedReport& r) {
    return json{{"k", r.k},
                {"dbar", r.dbar},
                {"popt", r.popt},
                {"ped", r.ped},
                {"estimator", ped_estimator_name(r.estimator)},
                {"weight_warning", r.weight_warning}};
}

json diagnostics_json(const DiagnosticsReport& d) {
    json j;
    j["rhat"] = json::object();
    j["ess"] = json::object();
    for (const auto& [k, v] : d.rhat) j["rhat"][k] = std::isnan(v) ? json() : json(v);
    for (const auto& [k, v] : d.ess) j["ess"][k] = v;
    j["acceptance"] = d.acceptance;
    j["flagged"] = d.flagged;
    j["max_rhat"] = d.max_rhat;
    return j;
}

}  // namespace

std::string summary_csv_string(const GibbsModel& model, const FitResult& fit) {
    std::vector<const ChainOutput*> ok;
    for (const auto& c : fit.chains)
        if (c.ok()) ok.push_back(&c);
    const auto& names = ok.front()->param_names;
    const auto& mask = model.shrink_mask();
    const auto& covs = model.dataset().covariate_names;

    std::ostringstream os;
    os << "param,mean,sd,median,q025,q975,rhat,ess,selected\n";
    for (arma::uword j = 0; j < names.size(); ++j) {
        const ParamSummary s = summarize_column(ok, j);
        os << names[j] << "," << format_double(s.mean) << "," << format_double(s.sd) << ","
           << format_double(s.median) << "," << format_double(s.q025) << ","
           << format_double(s.q975) << ",";
        const double rh = fit.diagnostics.rhat.at(names[j]);
        os << (std::isnan(rh) ? "" : format_double(rh)) << ","
           << format_double(fit.diagnostics.ess.at(names[j])) << ",";
        // selection flag for shrunk coefficients: 95% interval excludes zero
        bool is_shrunk_beta = false;
        if (names[j].rfind("beta.", 0) == 0) {
            const std::string cov = names[j].substr(names[j].rfind('.') + 1);
            for (arma::uword c = 0; c < covs.size(); ++c)
                if (covs[c] == cov && mask[c]) is_shrunk_beta = true;
        }
        if (is_shrunk_beta)
            os << ((s.q025 > 0.0 || s.q975 < 0.0) ? "1" : "0");
        os << "\n";
    }
    return os.str();
}

void write_fit_outputs(const std::string& dir, const RunConfig& config,
                       const LongitudinalDataset& ds, const FitResult& fit) {
    fs::create_directories(dir);
    std::vector<const ChainOutput*> ok;
    for (const auto& c : fit.chains)
        if (c.ok()) ok.push_back(&c);
    const GibbsModel model(ds, config.priors, fit.ped.k);

    // manifest
    json manifest;
    manifest["format_version"] = 1;
    manifest["dataset"] = fs::absolute(config.dataset_path).string();
    json schema;
    schema["intercept"] = config.schema.intercept;
    schema["random_effects"] = config.schema.z_names;
    schema["covariates"] = config.schema.covariates;
    schema["features"] = json::object();
    for (const auto& fspec : config.schema.features) {
        json fj;
        fj["family"] = family_name(fspec.family);
        if (fspec.family == Family::Zip)
            fj["variant"] = fspec.zip_variant == ZipVariant::Hall ? "hall" : "yaulee";
        schema["features"][fspec.name] = fj;
    }
    manifest["schema"] = schema;
    manifest["k"] = fit.ped.k;
    manifest["chains"] = config.mcmc.chains;
    manifest["iterations"] = config.mcmc.iterations;
    manifest["burn_in"] = config.mcmc.burn_in;
    manifest["thin"] = config.mcmc.thin;
    manifest["seed"] = config.mcmc.seed;
    manifest["estimator"] = ped_estimator_name(fit.ped.estimator);
    manifest["param_names"] = ok.front()->param_names;
    manifest["ids"] = ds.ids;
    manifest["q"] = model.layout().q;
    atomic_write_file(dir + "/manifest.json", manifest.dump(2) + "\n");

    // traces: one file per parameter, columns chain,draw,value
    const auto& names = ok.front()->param_names;
    for (arma::uword j = 0; j < names.size(); ++j) {
        std::ostringstream os;
        os << "chain,draw,value\n";
        for (const auto* c : ok)
            for (arma::uword t = 0; t < c->draws.n_rows; ++t)
                os << c->chain_id << "," << t << "," << format_double(c->draws(t, j)) << "\n";
        atomic_write_file(dir + "/traces/" + names[j] + ".csv", os.str());
    }

    {
        std::ostringstream os;
        os << "chain,draw,deviance\n";
        for (const auto* c : ok)
            for (arma::uword t = 0; t < c->deviance.n_elem; ++t)
                os << c->chain_id << "," << t << "," << format_double(c->deviance(t)) << "\n";
        atomic_write_file(dir + "/deviance.csv", os.str());
    }

    {
        std::ostringstream os;
        os << "chain,draw";
        for (const auto& id : ds.ids) os << ",c_" << id;
        os << "\n";
        for (const auto* c : ok)
            for (arma::uword t = 0; t < c->allocations.n_rows; ++t) {
                os << c->chain_id << "," << t;
                for (arma::uword i = 0; i < c->allocations.n_cols; ++i)
                    os << "," << (c->allocations(t, i) + 1);
                os << "\n";
            }
        atomic_write_file(dir + "/allocations.csv", os.str());
    }

    atomic_write_file(dir + "/summary.csv", summary_csv_string(model, fit));
    atomic_write_file(dir + "/ped_table.csv",
                      "k,dbar,popt,ped,estimator,weight_warning\n" + ped_row(fit.ped));
    atomic_write_file(dir + "/ped.json", ped_json(fit.ped).dump(2) + "\n");
    atomic_write_file(dir + "/rhat.json", diagnostics_json(fit.diagnostics).dump(2) + "\n");

    {
        std::ostringstream os;
        os << "id";
        for (arma::uword k = 0; k < fit.ped.k; ++k) os << ",prob_" << (k + 1);
        os << ",assignment\n";
        for (arma::uword i = 0; i < ds.m(); ++i) {
            os << ds.ids[i];
            for (arma::uword k = 0; k < fit.ped.k; ++k)
                os << "," << format_double(fit.membership.probabilities(i, k));
            os << "," << (fit.membership.assignment(i) + 1) << "\n";
        }
        atomic_write_file(dir + "/membership.csv", os.str());
    }
}

// ---------------------------------------------------------------------------
// subcommands

namespace {

std::string resolve_out_dir(const RunConfig& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    throw ConfigError("no output directory: pass --out or set 'output' in the config");
}

int guard(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const SamplerError& e) {
        std::fprintf(stderr, "sampler error: %s\n", e.what());
        return kExitSampler;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitSampler;
    }
}

}  // namespace

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir) {
    return guard([&]() {
        SimScenario sc =
            scenario_path.empty() ? SimScenario::reference_design(1) : parse_scenario(scenario_path);
        if (const char* env_seed = std::getenv("ZILCM_SEED")) sc.seed = std::stoull(env_seed);
        std::string out = out_dir;
        if (out.empty()) {
            if (const char* env_out = std::getenv("ZILCM_OUT")) out = env_out;
        }
        if (out.empty()) throw ConfigError("simulate needs --out (or ZILCM_OUT)");

        const SimResult sim = simulate_dataset(sc);
        const ValidationReport rep = validate_dataset(sim.dataset);
        if (!rep.ok()) throw DataError("generated dataset failed validation");

        fs::create_directories(out);
        write_dataset_csv(out + "/dataset.csv", sim.dataset);
        std::ostringstream os;
        os << "id,cluster\n";
        for (arma::uword i = 0; i < sim.labels.n_elem; ++i)
            os << sim.dataset.ids[i] << "," << (sim.labels(i) + 1) << "\n";
        atomic_write_file(out + "/truth_labels.csv", os.str());
        std::printf("simulate: wrote %llu individuals x %llu waves to %s\n",
                    static_cast<unsigned long long>(sc.m),
                    static_cast<unsigned long long>(sc.timepoints), out.c_str());
        return kExitOk;
    });
}

int cmd_fit(const std::string& config_path, const std::string& out_dir) {
    return guard([&]() {
        RunConfig cfg = parse_config(config_path);
        const std::string out = resolve_out_dir(cfg, out_dir);
        arma::uword K;
        if (cfg.k.has_value())
            K = *cfg.k;
        else if (cfg.k_range.size() == 1)
            K = cfg.k_range.front();
        else
            throw ConfigError("fit needs a single 'K' (use select-k for a K range)");

        const LongitudinalDataset ds = parse_dataset_csv(cfg.dataset_path, cfg.schema);
        cfg.mcmc.checkpoint_dir = out;
        fs::create_directories(out);
        const FitResult fit = run_fit(cfg, ds, K);
        write_fit_outputs(out, cfg, ds, fit);
        for (const auto& c : fit.chains)
            if (!c.ok())
                std::fprintf(stderr, "warning: chain %llu failed: %s\n",
                             static_cast<unsigned long long>(c.chain_id), c.error.c_str());
        std::printf("fit: K=%llu  PED=%s  max R-hat=%s  -> %s\n",
                    static_cast<unsigned long long>(K), format_double(fit.ped.ped).c_str(),
                    format_double(fit.diagnostics.max_rhat).c_str(), out.c_str());
        return kExitOk;
    });
}

int cmd_select_k(const std::string& config_path, const std::string& out_dir) {
    return guard([&]() {
        RunConfig cfg = parse_config(config_path);
        const std::string out = resolve_out_dir(cfg, out_dir);
        std::vector<arma::uword> ks = cfg.k_range;
        if (cfg.k.has_value()) ks = {*cfg.k};

        const LongitudinalDataset ds = parse_dataset_csv(cfg.dataset_path, cfg.schema);
        fs::create_directories(out);

        // one estimator for the whole sweep: fall back to two-pD for every K if
        // the paired-chain weights degenerate anywhere
        std::vector<PedReport> paired, twopd;
        for (arma::uword K : ks) {
            const FitResult fit = run_fit(cfg, ds, K);
            paired.push_back(fit.ped_paired);
            twopd.push_back(fit.ped_twopd);
            std::printf("select-k: K=%llu  PED=%s (paired) / %s (two-pD)\n",
                        static_cast<unsigned long long>(K),
                        format_double(fit.ped_paired.ped).c_str(),
                        format_double(fit.ped_twopd.ped).c_str());
        }
        bool degenerate = cfg.estimator == PedEstimator::TwoPd || cfg.mcmc.chains < 2;
        for (const auto& r : paired) degenerate = degenerate || r.weight_warning || r.k == 0;
        const std::vector<PedReport>& rows = degenerate ? twopd : paired;

        std::string table = "k,dbar,popt,ped,estimator,weight_warning\n";
        arma::uword best_k = 0;
        double best_ped = kInf;
        for (const auto& r : rows) {
            table += ped_row(r);
            if (r.ped < best_ped) {
                best_ped = r.ped;
                best_k = r.k;
            }
        }
        atomic_write_file(out + "/ped_table.csv", table);
        atomic_write_file(out + "/selected_k.json",
                          json{{"chosen_k", best_k}, {"ped", best_ped}}.dump(2) + "\n");
        std::printf("select-k: chosen K=%llu (PED=%s) -> %s\n",
                    static_cast<unsigned long long>(best_k), format_double(best_ped).c_str(),
                    out.c_str());
        return kExitOk;
    });
}

// ---------------------------------------------------------------------------
// fit-directory readers for diagnose / summarize

namespace {

struct FitDir {
    RunConfig config;
    LongitudinalDataset ds;
    std::vector<ChainOutput> chains;
    arma::uword K = 0;
};

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open '" + path + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) rows.push_back(split_csv_line(line));
    }
    return rows;
}

FitDir read_fit_dir(const std::string& dir) {
    const json manifest = load_json(dir + "/manifest.json", "manifest");
    FitDir fd;
    fd.K = manifest.at("k").get<arma::uword>();

    RunConfig& cfg = fd.config;
    cfg.dataset_path = manifest.at("dataset").get<std::string>();
    const json& schema = manifest.at("schema");
    cfg.schema.intercept = schema.at("intercept").get<bool>();
    cfg.schema.z_names = schema.at("random_effects").get<std::vector<std::string>>();
    cfg.schema.covariates = schema.at("covariates").get<std::vector<std::string>>();
    for (auto it = schema.at("features").begin(); it != schema.at("features").end(); ++it) {
        FeatureSpec spec;
        spec.name = it.key();
        spec.family = family_from_name(it.value().at("family").get<std::string>());
        if (it.value().contains("variant"))
            spec.zip_variant = it.value()["variant"].get<std::string>() == "hall"
                                   ? ZipVariant::Hall
                                   : ZipVariant::YauLee;
        cfg.schema.features.push_back(spec);
    }
    std::sort(cfg.schema.features.begin(), cfg.schema.features.end(),
              [](const FeatureSpec& a, const FeatureSpec& b) { return a.name < b.name; });
    cfg.estimator = ped_estimator_from_name(manifest.at("estimator").get<std::string>());

    fd.ds = parse_dataset_csv(cfg.dataset_path, cfg.schema);

    const auto param_names = manifest.at("param_names").get<std::vector<std::string>>();
    const arma::uword n_chains = manifest.at("chains").get<arma::uword>();

    // chain/draw layout from the first trace file
    std::map<arma::uword, arma::uword> draws_per_chain;
    {
        const auto rows = read_csv(dir + "/traces/" + param_names.front() + ".csv");
        for (arma::uword rix = 1; rix < rows.size(); ++rix)
            draws_per_chain[std::stoull(rows[rix][0])]++;
    }
    std::map<arma::uword, arma::uword> chain_slot;
    for (const auto& [cid, n] : draws_per_chain) {
        const arma::uword slot = fd.chains.size();
        chain_slot[cid] = slot;
        ChainOutput c;
        c.chain_id = cid;
        c.K = fd.K;
        c.param_names = param_names;
        c.draws.set_size(n, param_names.size());
        c.deviance.set_size(n);
        fd.chains.push_back(std::move(c));
    }
    (void)n_chains;

    for (arma::uword j = 0; j < param_names.size(); ++j) {
        const auto rows = read_csv(dir + "/traces/" + param_names[j] + ".csv");
        for (arma::uword rix = 1; rix < rows.size(); ++rix) {
            const arma::uword slot = chain_slot.at(std::stoull(rows[rix][0]));
            const arma::uword t = std::stoull(rows[rix][1]);
            fd.chains[slot].draws(t, j) =
                parse_double_strict(rows[rix][2], "(trace " + param_names[j] + ")");
        }
    }
    {
        const auto rows = read_csv(dir + "/deviance.csv");
        for (arma::uword rix = 1; rix < rows.size(); ++rix) {
            const arma::uword slot = chain_slot.at(std::stoull(rows[rix][0]));
            fd.chains[slot].deviance(std::stoull(rows[rix][1])) =
                parse_double_strict(rows[rix][2], "(deviance)");
        }
    }
    {
        const auto rows = read_csv(dir + "/allocations.csv");
        const arma::uword m = rows.front().size() - 2;
        for (auto& c : fd.chains) c.allocations.set_size(c.deviance.n_elem, m);
        for (arma::uword rix = 1; rix < rows.size(); ++rix) {
            const arma::uword slot = chain_slot.at(std::stoull(rows[rix][0]));
            const arma::uword t = std::stoull(rows[rix][1]);
            for (arma::uword i = 0; i < m; ++i)
                fd.chains[slot].allocations(t, i) = std::stoull(rows[rix][i + 2]) - 1;
        }
    }
    return fd;
}

}  // namespace

int cmd_diagnose(const std::string& fit_dir, bool strict) {
    return guard([&]() {
        FitDir fd = read_fit_dir(fit_dir);
        const GibbsModel model(fd.ds, fd.config.priors, fd.K);
        relabel(fd.chains, model);
        const DiagnosticsReport rep = compute_diagnostics(fd.chains);
        atomic_write_file(fit_dir + "/rhat.json", diagnostics_json(rep).dump(2) + "\n");

        // density series for every parameter (gaussian KDE on a 128-point grid)
        for (const auto& name : fd.chains.front().param_names) {
            arma::uword total = 0;
            for (const auto& c : fd.chains) total += c.draws.n_rows;
            arma::vec pooled(total);
            arma::uword at = 0;
            for (const auto& c : fd.chains) {
                pooled.subvec(at, at + c.draws.n_rows - 1) = c.draws.col(c.param_index(name));
                at += c.draws.n_rows;
            }
            const double sd = arma::stddev(pooled);
            arma::vec sorted = arma::sort(pooled);
            const double iqr = quantile_type7(sorted, 0.75) - quantile_type7(sorted, 0.25);
            double h = 0.9 * std::min(sd, iqr / 1.34) * std::pow(pooled.n_elem, -0.2);
            if (!(h > 0.0)) h = sd > 0.0 ? sd : 1.0;
            const double lo = sorted.front() - 3.0 * h, hi = sorted.back() + 3.0 * h;
            std::ostringstream os;
            os << "value,density\n";
            for (int g = 0; g < 128; ++g) {
                const double x = lo + (hi - lo) * g / 127.0;
                double dens = 0.0;
                for (const auto& v : pooled) dens += norm_pdf((x - v) / h);
                dens /= pooled.n_elem * h;
                os << format_double(x) << "," << format_double(dens) << "\n";
            }
            atomic_write_file(fit_dir + "/density/" + name + ".csv", os.str());
        }

        std::printf("diagnose: max R-hat=%s (%zu parameters, %zu flagged) -> %s\n",
                    format_double(rep.max_rhat).c_str(), rep.rhat.size(), rep.flagged.size(),
                    fit_dir.c_str());
        if (strict && rep.max_rhat > 1.1) {
            std::fprintf(stderr, "diagnostics failure: max R-hat %s exceeds 1.1\n",
                         format_double(rep.max_rhat).c_str());
            return kExitDiagnostics;
        }
        return kExitOk;
    });
}

int cmd_summarize(const std::string& fit_dir) {
    return guard([&]() {
        FitDir fd = read_fit_dir(fit_dir);
        const GibbsModel model(fd.ds, fd.config.priors, fd.K);
        relabel(fd.chains, model);

        FitResult fit;
        fit.chains = fd.chains;
        fit.diagnostics = compute_diagnostics(fit.chains);
        fit.membership = posterior_membership(fit.chains, fd.ds.m(), fd.K);
        fit.ped.k = fd.K;

        const std::string summary = summary_csv_string(model, fit);
        atomic_write_file(fit_dir + "/summary.csv", summary);

        // selected-variable table: shrunk coefficients whose interval excludes 0
        {
            std::istringstream is(summary);
            std::string line;
            std::getline(is, line);
            std::ostringstream os;
            os << "param,mean,q025,q975\n";
            while (std::getline(is, line)) {
                const auto toks = split_csv_line(line);
                if (toks.back() == "1") os << toks[0] << "," << toks[1] << "," << toks[4] << ","
                                           << toks[5] << "\n";
            }
            atomic_write_file(fit_dir + "/selected.csv", os.str());
        }

        // membership table
        {
            std::ostringstream os;
            os << "id";
            for (arma::uword k = 0; k < fd.K; ++k) os << ",prob_" << (k + 1);
            os << ",assignment\n";
            for (arma::uword i = 0; i < fd.ds.m(); ++i) {
                os << fd.ds.ids[i];
                for (arma::uword k = 0; k < fd.K; ++k)
                    os << "," << format_double(fit.membership.probabilities(i, k));
                os << "," << (fit.membership.assignment(i) + 1) << "\n";
            }
            atomic_write_file(fit_dir + "/membership.csv", os.str());
        }

        // cluster-conditional trajectory means per feature and wave
        {
            std::ostringstream os;
            os << "feature,cluster,wave,mean,n\n";
            for (arma::uword r = 0; r < fd.ds.R(); ++r) {
                std::map<std::pair<arma::uword, long>, std::pair<double, arma::uword>> acc;
                for (arma::uword i = 0; i < fd.ds.m(); ++i) {
                    const arma::uword k = fit.membership.assignment(i);
                    for (arma::uword j = 0; j < fd.ds.n_obs(i, r); ++j) {
                        auto& slot = acc[{k, fd.ds.waves[i](j)}];
                        slot.first += fd.ds.blocks[i][r].y(j);
                        slot.second += 1;
                    }
                }
                for (const auto& [key, val] : acc)
                    os << fd.ds.features[r].name << "," << (key.first + 1) << "," << key.second
                       << "," << format_double(val.first / val.second) << "," << val.second
                       << "\n";
            }
            atomic_write_file(fit_dir + "/trajectories.csv", os.str());
        }

        std::printf("summarize: wrote summary.csv, selected.csv, membership.csv, "
                    "trajectories.csv -> %s\n",
                    fit_dir.c_str());
        return kExitOk;
    });
}

}  // namespace zilcm
