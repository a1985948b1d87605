#include "aoisim/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aoisim {

JointAction random_policy_action(const EnvState& s, const EnvConfig& cfg, Rng& rng) {
    (void)s;
    JointAction action = JointAction::all_idle(cfg.users);
    for (int u = 0; u < cfg.users; ++u) {
        std::vector<int> earlier(action.subcarrier.begin(), action.subcarrier.begin() + u);
        std::vector<uint8_t> allowed = feasibility_mask(earlier, cfg);
        std::vector<int> options;
        for (int j = 0; j < static_cast<int>(allowed.size()); ++j)
            if (allowed[j]) options.push_back(j);
        int choice = options[uniform_int(rng, static_cast<int>(options.size()))];
        if (choice > 0) {
            action.subcarrier[u] = choice - 1;
            action.power_idx[u] = uniform_int(rng, cfg.power_actions());
        }
    }
    return action;
}

JointAction round_robin_action(const EnvState& s, const EnvConfig& cfg, int t) {
    (void)s;
    JointAction action = JointAction::all_idle(cfg.users);
    int slots = 2 * cfg.radio.subcarriers;
    int served = std::min(cfg.users, slots);
    int max_power = cfg.power_actions() - 1;
    int start = cfg.users > 0 ? t % cfg.users : 0;
    for (int j = 0; j < served; ++j) {
        int u = (start + j) % cfg.users;
        action.subcarrier[u] = j / 2;
        action.power_idx[u] = max_power;
    }
    return action;
}

JointAction max_aoi_greedy_action(const EnvState& s, const EnvConfig& cfg) {
    std::vector<int> order(cfg.users);
    std::iota(order.begin(), order.end(), 0);
    // Urgency: within one slot of the threshold counts as "near".
    auto urgency = [&](int u) {
        bool near = s.aoi[u] + 1 >= cfg.profiles[u].aoi_threshold;
        return near ? cfg.profiles[u].weight : 0.0;
    };
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double ua = urgency(a), ub = urgency(b);
        if (ua != ub) return ua > ub;
        if (s.aoi[a] != s.aoi[b]) return s.aoi[a] > s.aoi[b];
        return a < b;
    });

    JointAction action = JointAction::all_idle(cfg.users);
    std::vector<int> occupancy(cfg.radio.subcarriers, 0);
    int max_power = cfg.power_actions() - 1;
    int open_slots = 2 * cfg.radio.subcarriers;
    for (int u : order) {
        if (open_slots == 0) break;
        int best = -1;
        for (int n = 0; n < cfg.radio.subcarriers; ++n) {
            if (occupancy[n] >= 2) continue;
            if (best == -1 || s.gains.at(u, n) > s.gains.at(u, best)) best = n;
        }
        if (best == -1) break;
        action.subcarrier[u] = best;
        action.power_idx[u] = max_power;
        occupancy[best] += 1;
        open_slots -= 1;
    }
    return action;
}

long long count_feasible_actions(const EnvConfig& cfg) {
    int n = cfg.radio.subcarriers;
    int p = cfg.power_actions();
    // Only the tally of once- and twice-occupied subcarriers matters.
    std::vector<std::vector<double>> count(n + 1, std::vector<double>(n + 1, 0.0));
    count[0][0] = 1.0;
    for (int u = 0; u < cfg.users; ++u) {
        std::vector<std::vector<double>> next(n + 1, std::vector<double>(n + 1, 0.0));
        for (int n1 = 0; n1 <= n; ++n1)
            for (int n2 = 0; n1 + n2 <= n; ++n2) {
                double c = count[n1][n2];
                if (c == 0.0) continue;
                int n0 = n - n1 - n2;
                next[n1][n2] += c;                                       // idle
                if (n0 > 0) next[n1 + 1][n2] += c * n0 * p;              // join an empty subcarrier
                if (n1 > 0) next[n1 - 1][n2 + 1] += c * n1 * p;          // pair up
            }
        count.swap(next);
    }
    double total = 0.0;
    for (const auto& row : count)
        for (double c : row) total += c;
    constexpr double kCap = 4e18;
    return total > kCap ? static_cast<long long>(kCap) : static_cast<long long>(total);
}

namespace {

// Leaf evaluation for the exhaustive search: same dynamics as apply_action on
// frozen gains, computed without intermediate allocations.
double one_step_reward(const EnvState& s, const EnvConfig& cfg,
                       const std::vector<int>& subcarrier, const std::vector<int>& power_idx,
                       const std::vector<std::vector<int>>& occupants) {
    double b = cfg.radio.subcarrier_bandwidth_hz();
    double sigma = cfg.radio.noise_w;
    std::vector<double> rate(cfg.users, 0.0);
    for (int n = 0; n < cfg.radio.subcarriers; ++n) {
        const std::vector<int>& occ = occupants[n];
        if (occ.empty()) continue;
        if (occ.size() == 1) {
            int u = occ[0];
            double pw = cfg.radio.power_levels_w[power_idx[u]];
            rate[u] = b * std::log2(1.0 + pw * s.gains.at(u, n) / sigma);
        } else {
            int u = occ[0], v = occ[1];
            // weaker first, ties to the lower index
            double gu = s.gains.at(u, n), gv = s.gains.at(v, n);
            int weak = (gu < gv || (gu == gv && u < v)) ? u : v;
            int strong = weak == u ? v : u;
            double pw_w = cfg.radio.power_levels_w[power_idx[weak]];
            double pw_s = cfg.radio.power_levels_w[power_idx[strong]];
            double gw = s.gains.at(weak, n), gs = s.gains.at(strong, n);
            rate[weak] = b * std::log2(1.0 + pw_w * gw / (sigma + pw_s * gs));
            rate[strong] = b * std::log2(1.0 + pw_s * gs / sigma);
        }
    }
    long long aoi_sum = 0;
    double penalty = 0.0;
    for (int u = 0; u < cfg.users; ++u) {
        bool done = s.residual_bits[u] - rate[u] <= 0.0;
        long long a = done ? s.aoi[u] - s.aoi_reset[u] + 1 : s.aoi[u] + 1;
        aoi_sum += a;
        if (a > cfg.profiles[u].aoi_threshold) penalty += cfg.profiles[u].weight;
    }
    (void)subcarrier;
    return -(static_cast<double>(aoi_sum) / (static_cast<double>(cfg.users) * static_cast<double>(cfg.a_max)) +
             cfg.lambda * penalty);
}

struct BruteForceSearch {
    const EnvState& s;
    const EnvConfig& cfg;
    std::vector<int> subcarrier;
    std::vector<int> power_idx;
    std::vector<std::vector<int>> occupants;
    JointAction best_action;
    double best_reward = -std::numeric_limits<double>::infinity();
    bool found = false;

    BruteForceSearch(const EnvState& s_, const EnvConfig& cfg_)
        : s(s_), cfg(cfg_),
          subcarrier(cfg_.users, -1),
          power_idx(cfg_.users, 0),
          occupants(cfg_.radio.subcarriers) {}

    void visit(int u) {
        if (u == cfg.users) {
            double r = one_step_reward(s, cfg, subcarrier, power_idx, occupants);
            // strict improvement keeps the lexicographically first tie
            if (!found || r > best_reward) {
                found = true;
                best_reward = r;
                best_action.subcarrier = subcarrier;
                best_action.power_idx = power_idx;
            }
            return;
        }
        // idle first: lexicographic option order idle < (n,p) ascending
        subcarrier[u] = -1;
        power_idx[u] = 0;
        visit(u + 1);
        for (int n = 0; n < cfg.radio.subcarriers; ++n) {
            if (occupants[n].size() >= 2) continue;
            occupants[n].push_back(u);
            subcarrier[u] = n;
            for (int p = 0; p < cfg.power_actions(); ++p) {
                power_idx[u] = p;
                visit(u + 1);
            }
            occupants[n].pop_back();
            subcarrier[u] = -1;
            power_idx[u] = 0;
        }
    }
};

}  // namespace

std::pair<JointAction, double> brute_force_best_action(const EnvState& s, const EnvConfig& cfg) {
    long long feasible = count_feasible_actions(cfg);
    if (feasible > 1000000)
        throw SizeError("brute force guard: " + std::to_string(feasible) +
                        " feasible actions exceed 10^6");
    BruteForceSearch search(s, cfg);
    search.visit(0);
    return {search.best_action, search.best_reward};
}

namespace {

struct RandomPolicy : Policy {
    JointAction act(const EnvState& s, const EnvConfig& cfg, Rng& rng) override {
        return random_policy_action(s, cfg, rng);
    }
    std::string name() const override { return "random"; }
};

struct RoundRobinPolicy : Policy {
    JointAction act(const EnvState& s, const EnvConfig& cfg, Rng&) override {
        return round_robin_action(s, cfg, s.t);
    }
    std::string name() const override { return "round-robin"; }
};

struct MaxAoiGreedyPolicy : Policy {
    JointAction act(const EnvState& s, const EnvConfig& cfg, Rng&) override {
        return max_aoi_greedy_action(s, cfg);
    }
    std::string name() const override { return "greedy"; }
};

struct BruteForcePolicy : Policy {
    JointAction act(const EnvState& s, const EnvConfig& cfg, Rng&) override {
        return brute_force_best_action(s, cfg).first;
    }
    std::string name() const override { return "oracle"; }
};

struct ActorPolicy : Policy {
    ActorNet& actor;
    bool greedy;
    ActorPolicy(ActorNet& actor_, bool greedy_) : actor(actor_), greedy(greedy_) {}
    JointAction act(const EnvState& s, const EnvConfig& cfg, Rng& rng) override {
        Tensor features = state_features(s, cfg);
        Tape tape(false);
        ActorOutput out = actor.forward(tape, features);
        const Tensor& ch = tape.val(out.channel_logits);
        const Tensor& pw = tape.val(out.power_logits);
        if (greedy) return greedy_masked_action(ch, pw, cfg);
        return sample_masked_action(ch, pw, cfg, rng).action;
    }
    std::string name() const override { return greedy ? "actor-greedy" : "actor-sample"; }
};

}  // namespace

std::unique_ptr<Policy> make_baseline(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::random: return std::make_unique<RandomPolicy>();
        case BaselineKind::round_robin: return std::make_unique<RoundRobinPolicy>();
        case BaselineKind::max_aoi_greedy: return std::make_unique<MaxAoiGreedyPolicy>();
        case BaselineKind::brute_force: return std::make_unique<BruteForcePolicy>();
    }
    throw ContractError("unknown baseline kind");
}

std::unique_ptr<Policy> make_actor_policy(ActorNet& actor, bool greedy) {
    return std::make_unique<ActorPolicy>(actor, greedy);
}

PolicySummary evaluate_policy(Policy& policy, const EnvConfig& cfg, int episodes, uint64_t seed,
                              std::vector<TraceRow>* trace) {
    PolicySummary summary;
    summary.policy = policy.name();
    summary.seed = seed;
    summary.episodes = episodes;
    summary.per_user.assign(cfg.users, PerUserSummary{});

    int horizon = cfg.horizon;
    // per-episode accumulators written by parallel tasks
    std::vector<double> ep_reward(episodes, 0.0);
    std::vector<std::vector<long long>> ep_aoi(episodes), ep_viol(episodes), ep_done(episodes);
    if (trace != nullptr)
        trace->assign(static_cast<size_t>(episodes) * horizon * cfg.users, TraceRow{});

    parallel_shards(episodes, [&](int ep) {
        Rng env_rng(mix_seed(mix_seed(seed, 0x4556454e /* "EVEN" */), static_cast<uint64_t>(ep)));
        Rng act_rng(mix_seed(mix_seed(seed, 0x45414354 /* "EACT" */), static_cast<uint64_t>(ep)));
        EnvState state = env_reset(cfg, env_rng());
        ep_aoi[ep].assign(cfg.users, 0);
        ep_viol[ep].assign(cfg.users, 0);
        ep_done[ep].assign(cfg.users, 0);
        for (int t = 0; t < horizon; ++t) {
            JointAction action = policy.act(state, cfg, act_rng);
            SlotAssignment assignment = to_assignment(action, cfg);
            StepResult step = env_step(state, action, cfg, env_rng);
            ep_reward[ep] += step.reward;
            for (int u = 0; u < cfg.users; ++u) {
                ep_aoi[ep][u] += step.next.aoi[u];
                ep_viol[ep][u] += step.violated[u];
                ep_done[ep][u] += step.completed[u];
            }
            if (trace != nullptr) {
                size_t base = (static_cast<size_t>(ep) * horizon + t) * cfg.users;
                for (int u = 0; u < cfg.users; ++u) {
                    TraceRow& row = (*trace)[base + u];
                    row.t = step.next.t;
                    row.user = u;
                    row.aoi = step.next.aoi[u];
                    row.residual_bits = step.next.residual_bits[u];
                    row.aoi_reset = step.next.aoi_reset[u];
                    row.subcarrier = action.subcarrier[u];
                    row.power_w = assignment.power_w[u];
                    row.rate_bits = step.rate_bits[u];
                    row.done_flag = step.completed[u];
                    row.violation_flag = step.violated[u];
                    row.reward = step.reward;
                }
            }
            state = std::move(step.next);
        }
    });

    double slots = static_cast<double>(episodes) * horizon;
    for (int ep = 0; ep < episodes; ++ep) {
        summary.mean_reward += ep_reward[ep];
        for (int u = 0; u < cfg.users; ++u) {
            summary.per_user[u].mean_aoi += static_cast<double>(ep_aoi[ep][u]);
            summary.per_user[u].violation_rate += static_cast<double>(ep_viol[ep][u]);
            summary.per_user[u].completions_per_episode += static_cast<double>(ep_done[ep][u]);
        }
    }
    summary.mean_reward /= slots;
    for (int u = 0; u < cfg.users; ++u) {
        summary.per_user[u].mean_aoi /= slots;
        summary.per_user[u].violation_rate /= slots;
        summary.per_user[u].completions_per_episode /= episodes;
        summary.mean_aoi += summary.per_user[u].mean_aoi;
        summary.violation_rate += summary.per_user[u].violation_rate;
    }
    summary.mean_aoi /= cfg.users;
    summary.violation_rate /= cfg.users;
    return summary;
}

}  // namespace aoisim
