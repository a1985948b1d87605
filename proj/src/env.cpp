#include "aoisim/env.hpp"

#include <cmath>
#include <string>

namespace aoisim {

std::vector<UserProfile> build_profiles(int users) {
    if (users < 1) throw ConfigError("env.users must be >= 1");
    std::vector<UserProfile> profiles(users);
    for (int u = 0; u < users; ++u) {
        UserProfile& p = profiles[u];
        p.user = u;
        p.aoi_threshold = 15 + u;
        p.task_bits = (1.0 + 0.25 * u) * 1e6;
        p.weight = 40.0 - 2.0 * u;
        p.max_tasks = 3;
        if (p.weight <= 0.0)
            throw ConfigError("env.users=" + std::to_string(users) +
                              " drives the default penalty weight of user " + std::to_string(u + 1) +
                              " to " + std::to_string(p.weight) + "; override env.profiles");
    }
    return profiles;
}

void EnvConfig::validate() const {
    if (users < 1) throw ConfigError("env.users must be >= 1");
    radio.validate();
    if (horizon < 1) throw ConfigError("env.horizon must be >= 1");
    if (static_cast<int>(profiles.size()) != users)
        throw ConfigError("env.profiles must list exactly env.users entries");
    for (const UserProfile& p : profiles) {
        std::string at = "env.profiles[" + std::to_string(p.user) + "]";
        if (p.aoi_threshold <= 0) throw ConfigError(at + ".aoi_threshold must be > 0");
        if (p.weight <= 0.0) throw ConfigError(at + ".weight must be > 0");
        if (p.task_bits <= 0.0) throw ConfigError(at + ".task_bits must be > 0");
        if (a_max < p.aoi_threshold)
            throw ConfigError("env.a_max must be >= every aoi_threshold (" + at + ")");
    }
}

std::pair<long long, long long> aoi_update(long long a, long long a_reset, bool task_done) {
    if (!task_done) return {a + 1, a_reset};
    long long next = a - a_reset + 1;
    return {next, next};
}

double instantaneous_reward(const std::vector<long long>& aoi, const EnvConfig& cfg) {
    long long aoi_sum = 0;
    for (long long a : aoi) aoi_sum += a;
    double penalty = 0.0;
    for (int u = 0; u < cfg.users; ++u)
        if (aoi[u] > cfg.profiles[u].aoi_threshold) penalty += cfg.profiles[u].weight;
    return -(static_cast<double>(aoi_sum) / (static_cast<double>(cfg.users) * static_cast<double>(cfg.a_max)) +
             cfg.lambda * penalty);
}

EnvState env_reset(const EnvConfig& cfg, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x454e5652 /* "ENVR" */));
    EnvState s;
    s.aoi.assign(cfg.users, 0);
    s.aoi_reset.assign(cfg.users, 0);
    s.residual_bits.resize(cfg.users);
    for (int u = 0; u < cfg.users; ++u) s.residual_bits[u] = cfg.profiles[u].task_bits;
    s.tasks_completed.assign(cfg.users, 0);
    s.gains = sample_gains(rng, cfg.users, cfg.radio.subcarriers, cfg.radio.fading_mean);
    s.t = 0;
    return s;
}

std::vector<uint8_t> feasibility_mask(const std::vector<int>& earlier_subcarriers,
                                      const EnvConfig& cfg) {
    std::vector<uint8_t> allowed(cfg.channel_actions(), 1);
    std::vector<int> occupancy(cfg.radio.subcarriers, 0);
    for (int n : earlier_subcarriers)
        if (n >= 0) occupancy[n] += 1;
    for (int n = 0; n < cfg.radio.subcarriers; ++n)
        if (occupancy[n] >= 2) allowed[1 + n] = 0;
    return allowed;
}

SlotAssignment to_assignment(const JointAction& action, const EnvConfig& cfg) {
    if (static_cast<int>(action.subcarrier.size()) != cfg.users ||
        static_cast<int>(action.power_idx.size()) != cfg.users)
        throw ContractError("action does not cover every user");
    SlotAssignment a;
    a.subcarrier = action.subcarrier;
    a.power_w.assign(cfg.users, 0.0);
    for (int u = 0; u < cfg.users; ++u) {
        if (action.subcarrier[u] == -1) continue;
        int pi = action.power_idx[u];
        if (pi < 0 || pi >= cfg.power_actions())
            throw ContractError("user " + std::to_string(u) + " has invalid power index");
        a.power_w[u] = cfg.radio.power_levels_w[pi];
    }
    return a;
}

StepResult apply_action(const EnvState& s, const JointAction& action, const EnvConfig& cfg) {
    SlotAssignment assignment = to_assignment(action, cfg);
    StepResult r;
    r.rate_bits = slot_rates(assignment, s.gains, cfg.radio);  // validates C2/C3
    r.next = s;
    r.completed.assign(cfg.users, 0);
    r.violated.assign(cfg.users, 0);
    for (int u = 0; u < cfg.users; ++u) {
        r.next.residual_bits[u] -= r.rate_bits[u];
        bool done = r.next.residual_bits[u] <= 0.0;
        auto [a, a_reset] = aoi_update(s.aoi[u], s.aoi_reset[u], done);
        r.next.aoi[u] = a;
        r.next.aoi_reset[u] = a_reset;
        if (done) {
            // Next task is generated immediately; surplus bits are discarded.
            r.next.residual_bits[u] = cfg.profiles[u].task_bits;
            r.next.tasks_completed[u] += 1;
            r.completed[u] = 1;
        }
        if (r.next.aoi[u] > cfg.profiles[u].aoi_threshold) r.violated[u] = 1;
    }
    r.reward = instantaneous_reward(r.next.aoi, cfg);
    return r;
}

StepResult env_step(const EnvState& s, const JointAction& action, const EnvConfig& cfg, Rng& rng) {
    StepResult r = apply_action(s, action, cfg);
    r.next.gains = sample_gains(rng, cfg.users, cfg.radio.subcarriers, cfg.radio.fading_mean);
    r.next.t = s.t + 1;
    r.terminal = r.next.t >= cfg.horizon;
    return r;
}

Tensor state_features(const EnvState& s, const EnvConfig& cfg) {
    int n = cfg.radio.subcarriers;
    Tensor f = Tensor::zeros({cfg.users, cfg.feature_dim()});
    for (int u = 0; u < cfg.users; ++u) {
        double* row = f.data.data() + static_cast<size_t>(u) * cfg.feature_dim();
        row[0] = static_cast<double>(s.aoi[u]) / static_cast<double>(cfg.a_max);
        row[1] = s.residual_bits[u] / cfg.profiles[u].task_bits;
        row[2] = static_cast<double>(s.aoi_reset[u]) / static_cast<double>(cfg.a_max);
        for (int j = 0; j < n; ++j) row[3 + j] = s.gains.at(u, j);
    }
    return f;
}

}  // namespace aoisim
