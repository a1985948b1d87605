#pragma once

#include <string>
#include <vector>

#include "aoisim/env.hpp"
#include "aoisim/nets.hpp"
#include "aoisim/ppo.hpp"

namespace aoisim {

// Everything a run needs, loadable from a JSON document with nested sections.
// An empty document yields the full simulation defaults; unknown keys are
// rejected with their path. Environment variables named AOISIM_<SECTION>_<KEY>
// (AOISIM_SEED, AOISIM_PPO_LR, AOISIM_NET_D_MODEL, ...) override file values.
struct ExperimentConfig {
    uint64_t seed = 0;
    std::string out_dir = "run";
    std::vector<double> attention_snapshots = {0.0, 0.1, 0.25, 0.5, 0.7, 1.0};

    // env
    int users = 20;
    int horizon = 200;
    long long a_max = 50;
    double lambda = 0.1;
    int max_tasks = 3;
    std::vector<UserProfile> explicit_profiles;  // empty: arithmetic-sequence defaults

    RadioConfig radio;

    // net
    std::string policy = "transformer";  // transformer | mlp
    int d_model = 256;
    int n_heads = 8;
    int n_layers = 3;
    int d_ff = 0;  // 0 resolves to 4 * d_model

    PPOConfig ppo;

    int resolved_d_ff() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    std::vector<UserProfile> resolved_profiles() const;
    EnvConfig env_config() const;
    NetConfig net_config() const;
    PolicyArch arch() const;
    void validate() const;  // validates every section, including derived configs
};

// Parses a JSON document (empty or whitespace-only text counts as "{}").
// Environment overrides apply after the file, before validation.
ExperimentConfig parse_config(const std::string& text, bool apply_env_overrides = true);

// Reads the file at `path`; missing file is a ConfigError.
ExperimentConfig load_config(const std::string& path, bool apply_env_overrides = true);

// Canonical JSON with every field resolved (profiles expanded, d_ff concrete).
// load(save(cfg)) reproduces cfg exactly.
std::string save_config(const ExperimentConfig& cfg);

}  // namespace aoisim
