#pragma once

#include <cstdint>
#include <vector>

#include "aoisim/channel.hpp"
#include "aoisim/tensor.hpp"

namespace aoisim {

struct UserProfile {
    int user = 0;                  // 0-based index
    long long aoi_threshold = 15;  // slots
    double weight = 40.0;          // penalty when AoI strictly exceeds the threshold
    double task_bits = 1e6;
    int max_tasks = 3;             // completion-count bookkeeping only
};

// Heterogeneous defaults: thresholds 15,16,... slots, task sizes 1,1.25,...
// Mbit, weights 40,38,... Throws ConfigError when a weight would drop to 0.
std::vector<UserProfile> build_profiles(int users);

struct EnvConfig {
    int users = 20;
    RadioConfig radio;
    long long a_max = 50;  // reward normalizer only; AoI itself is unclamped
    double lambda = 0.1;
    int horizon = 200;
    std::vector<UserProfile> profiles;

    int feature_dim() const { return 3 + radio.subcarriers; }
    int channel_actions() const { return radio.subcarriers + 1; }  // idle + subcarriers
    int power_actions() const { return static_cast<int>(radio.power_levels_w.size()); }
    void validate() const;
};

struct EnvState {
    std::vector<long long> aoi;
    std::vector<long long> aoi_reset;
    std::vector<double> residual_bits;  // > 0 at every slot start
    std::vector<int> tasks_completed;
    GainMatrix gains;
    int t = 0;
};

// Per-user subcarrier choice (-1 = idle) plus power-level index (ignored, and
// canonically 0, when idle). One choice per user makes C1 structural.
struct JointAction {
    std::vector<int> subcarrier;
    std::vector<int> power_idx;

    static JointAction all_idle(int users) {
        return {std::vector<int>(users, -1), std::vector<int>(users, 0)};
    }
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    std::vector<double> rate_bits;
    std::vector<uint8_t> completed;
    std::vector<uint8_t> violated;  // aoi strictly above threshold after the update
    bool terminal = false;
};

// One partial-reset AoI transition. Not done: age by one. Done: the new age is
// a - a_reset + 1 and the reset value snaps to it, since the next task is
// generated in the same instant.
std::pair<long long, long long> aoi_update(long long a, long long a_reset, bool task_done);

// r = -( sum(a)/U*a_max + lambda * sum_u w_u * [a_u > tau_u] ), violations strict.
double instantaneous_reward(const std::vector<long long>& aoi, const EnvConfig& cfg);

EnvState env_reset(const EnvConfig& cfg, uint64_t seed);

// Channel mask for the user choosing next, given earlier users' subcarrier
// choices this slot. Index 0 is idle (always allowed), 1+n is subcarrier n,
// masked once two earlier users picked it. Power levels are all feasible by
// construction, so no power mask exists.
std::vector<uint8_t> feasibility_mask(const std::vector<int>& earlier_subcarriers,
                                      const EnvConfig& cfg);

SlotAssignment to_assignment(const JointAction& action, const EnvConfig& cfg);

// Applies one slot on the state's frozen gains: rates, task progress,
// AoI updates, reward. No gain resampling and no time advance; env_step and
// the single-slot oracle both build on this.
StepResult apply_action(const EnvState& s, const JointAction& action, const EnvConfig& cfg);

// Full transition: apply_action, then resample gains and advance the clock.
// Terminal exactly when the horizon is reached.
StepResult env_step(const EnvState& s, const JointAction& action, const EnvConfig& cfg, Rng& rng);

// Per-user rows [a/a_max, residual/L, a_reset/a_max, g_1..g_N], shape [U, 3+N].
Tensor state_features(const EnvState& s, const EnvConfig& cfg);

// Episode trace row; the CSV schema of traces written by the harness.
struct TraceRow {
    int t;
    int user;
    long long aoi;
    double residual_bits;
    long long aoi_reset;
    int subcarrier;
    double power_w;
    double rate_bits;
    int done_flag;
    int violation_flag;
    double reward;
};

}  // namespace aoisim
