#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aoisim/harness.hpp"

using namespace aoisim;

namespace {

// Config resolution order: file (or built-in defaults), then AOISIM_* env
// overrides, then command-line flags.
ExperimentConfig resolve_config(const std::string& config_path, bool have_seed, uint64_t seed,
                                const std::string& out_dir, const std::string& policy,
                                bool have_episodes, long episodes) {
    ExperimentConfig cfg =
        config_path.empty() ? parse_config("", true) : load_config(config_path, true);
    if (have_seed) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!policy.empty()) {
        if (policy != "transformer" && policy != "mlp")
            throw ConfigError("train --policy must be 'transformer' or 'mlp', got '" + policy + "'");
        cfg.policy = policy;
        cfg.validate();
    }
    if (have_episodes) {
        cfg.ppo.episodes = episodes;
        cfg.validate();
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"freshness-aware NOMA uplink scheduling lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir, policy, checkpoint, run_dir;
    uint64_t seed = 0;
    long episodes = 0;
    bool have_seed = false, have_episodes = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (JSON); omitted means defaults");
        cmd->add_option("--seed", seed, "run seed")->each([&](const std::string&) { have_seed = true; });
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--episodes", episodes, "episode count")
            ->each([&](const std::string&) { have_episodes = true; });
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a policy and write the run directory");
    add_common(train_cmd);
    train_cmd->add_option("--policy", policy, "transformer|mlp");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or a baseline policy");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file to evaluate");
    std::string eval_policy = "checkpoint";
    eval_cmd->add_option("--policy", eval_policy, "checkpoint|random|round-robin|greedy|oracle");

    CLI::App* check_cmd = app.add_subcommand("check", "run the built-in verification bundle");
    check_cmd->add_option("--config", config_path, "config file to validate and check under");

    CLI::App* oracle_cmd = app.add_subcommand("oracle-check", "brute-force comparisons at tiny sizes");
    int oc_users = 3, oc_subcarriers = 2, oc_levels = 2, oc_states = 200;
    uint64_t oc_seed = 0;
    oracle_cmd->add_option("--users", oc_users, "user count");
    oracle_cmd->add_option("--subcarriers", oc_subcarriers, "subcarrier count");
    oracle_cmd->add_option("--levels", oc_levels, "power level count");
    oracle_cmd->add_option("--states", oc_states, "random states to test");
    oracle_cmd->add_option("--seed", oc_seed, "rng seed");

    CLI::App* export_cmd = app.add_subcommand("export-attention", "export snapshot matrices + entropy");
    export_cmd->add_option("--run", run_dir, "run directory")->required();
    std::vector<long> episode_filter;
    export_cmd->add_option("--episodes", episode_filter, "episodes to export (default all)");

    CLI::App* plot_cmd = app.add_subcommand("plot-data", "emit plot-ready CSVs for runs under a directory");
    plot_cmd->add_option("--run", run_dir, "directory containing run subdirectories")->required();
    int window = 50;
    plot_cmd->add_option("--window", window, "smoothing window (1 = raw)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train_cmd)) {
            ExperimentConfig cfg =
                resolve_config(config_path, have_seed, seed, out_dir, policy, have_episodes, episodes);
            return run_train(cfg, std::cout);
        }
        if (app.got_subcommand(eval_cmd)) {
            ExperimentConfig cfg =
                resolve_config(config_path, have_seed, seed, out_dir, "", false, 0);
            int n = have_episodes ? static_cast<int>(episodes) : 100;
            return run_eval(cfg, checkpoint, eval_policy, n, cfg.seed, std::cout);
        }
        if (app.got_subcommand(check_cmd)) {
            ExperimentConfig cfg = resolve_config(config_path, false, 0, "", "", false, 0);
            return run_checks(cfg, std::cout);
        }
        if (app.got_subcommand(oracle_cmd)) {
            return run_oracle_check(oc_users, oc_subcarriers, oc_levels, oc_states, oc_seed, std::cout);
        }
        if (app.got_subcommand(export_cmd)) {
            return export_attention(run_dir, episode_filter, std::cout);
        }
        if (app.got_subcommand(plot_cmd)) {
            return emit_plots(run_dir, window, std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
