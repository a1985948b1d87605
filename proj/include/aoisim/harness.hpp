#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "aoisim/baselines.hpp"
#include "aoisim/config.hpp"
#include "aoisim/ppo.hpp"

namespace aoisim {

// Experiment directory layout: config copy, metrics.csv, checkpoints/,
// attention/, traces/, summary.json.
struct RunPaths {
    std::string root;
    std::string config;
    std::string metrics;
    std::string checkpoints_dir;
    std::string latest_checkpoint;
    std::string best_checkpoint;
    std::string attention_dir;
    std::string attention_snapshots;
    std::string traces_dir;
    std::string summary;
};

RunPaths run_layout(const std::string& out_dir);

// Deterministic text form used by every CSV writer (shortest round-trip).
std::string format_double(double v);

// metrics.csv
extern const char* kMetricsHeader;
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// attention snapshots: episode,layer,head,row_user,a_1..a_U
void write_attention_snapshots(const std::string& path, int users);  // header only
void append_attention_snapshot(const std::string& path, long episode,
                               const std::vector<std::vector<Tensor>>& attention);
struct AttentionRow {
    long episode;
    int layer;
    int head;
    int row_user;
    std::vector<double> weights;
};
std::vector<AttentionRow> read_attention_snapshots(const std::string& path);

// episode traces
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);
std::vector<TraceRow> read_trace_csv(const std::string& path);

// evaluation summary JSON
std::string summary_to_json(const PolicySummary& summary);
void write_summary_json(const std::string& path, const PolicySummary& summary);
PolicySummary read_summary_json(const std::string& path);

// Commands. All return process exit codes (0 ok, 1 check failure; ConfigError
// escapes to the caller).
int run_train(const ExperimentConfig& cfg, std::ostream& log);
int run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
             const std::string& policy_name, int episodes, uint64_t seed, std::ostream& log);
int run_checks(const ExperimentConfig& cfg, std::ostream& log);
int run_oracle_check(int users, int subcarriers, int power_levels, int states, uint64_t seed,
                     std::ostream& log);
int export_attention(const std::string& run_dir, const std::vector<long>& episode_filter,
                     std::ostream& log);
int emit_plots(const std::string& dir, int window, std::ostream& log);

// Small env/net builders shared by the check suite, tests, and the CLI.
EnvConfig make_toy_env(int users, int subcarriers, int horizon, int power_levels);

// A state with randomized AoI, reset values, residual work, and fresh gains;
// exercises the oracle and heuristics away from the initial state.
EnvState random_env_state(const EnvConfig& cfg, Rng& rng);

// Reference GAE by direct truncated double summation of the discounted
// delta series; the backward recursion in compute_gae must match it.
Advantages gae_direct_reference(const RolloutBuffer& buffer, double gamma, double gae_lambda);

// Loads a checkpoint into a fresh actor/critic pair for the config.
struct LoadedNets {
    std::unique_ptr<ActorNet> actor;
    std::unique_ptr<CriticNet> critic;
};
LoadedNets load_nets(const ExperimentConfig& cfg, const std::string& checkpoint_path);

}  // namespace aoisim
