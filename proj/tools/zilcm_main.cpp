#include <CLI11.hpp>

#include "zilcm/io.hpp"

int main(int argc, char** argv) {
    CLI::App app{"zilcm: Bayesian latent-class model for multivariate zero-inflated "
                 "longitudinal outcomes"};
    app.require_subcommand(1);

    std::string config_path, out_dir, fit_dir;
    bool strict = false;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset with truth labels");
    sim->add_option("--config", config_path, "Scenario file (JSON); omit for the built-in "
                                             "two-cluster reference design");
    sim->add_option("--out", out_dir, "Output directory");

    auto* fit = app.add_subcommand("fit", "Fit the model at a single K");
    fit->add_option("--config", config_path, "Run configuration (JSON)")->required();
    fit->add_option("--out", out_dir, "Output directory (overrides config)");

    auto* sel = app.add_subcommand("select-k", "Fit a K range and rank by penalized expected "
                                               "deviance");
    sel->add_option("--config", config_path, "Run configuration (JSON)")->required();
    sel->add_option("--out", out_dir, "Output directory (overrides config)");

    auto* dia = app.add_subcommand("diagnose", "Convergence diagnostics for a fit directory");
    dia->add_option("fit_dir", fit_dir, "Directory written by 'fit'")->required();
    dia->add_flag("--strict", strict, "Exit 5 if any split R-hat exceeds 1.1");

    auto* summ = app.add_subcommand("summarize", "Posterior summary tables for a fit directory");
    summ->add_option("fit_dir", fit_dir, "Directory written by 'fit'")->required();

    CLI11_PARSE(app, argc, argv);

    if (sim->parsed()) return zilcm::cmd_simulate(config_path, out_dir);
    if (fit->parsed()) return zilcm::cmd_fit(config_path, out_dir);
    if (sel->parsed()) return zilcm::cmd_select_k(config_path, out_dir);
    if (dia->parsed()) return zilcm::cmd_diagnose(fit_dir, strict);
    if (summ->parsed()) return zilcm::cmd_summarize(fit_dir);
    return zilcm::kExitConfig;
}
