#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aoisim/env.hpp"
#include "aoisim/nets.hpp"

namespace aoisim {

// Uniform over the feasible options of each user, decided sequentially with
// the same masking order the learned sampler uses; uniform power level.
JointAction random_policy_action(const EnvState& s, const EnvConfig& cfg, Rng& rng);

// Deterministic rotation: the start user advances by one each slot and the
// next min(U, 2N) users fill subcarrier slots two at a time, at max power.
JointAction round_robin_action(const EnvState& s, const EnvConfig& cfg, int t);

// Myopic heuristic: users about to breach their threshold get weight-sized
// priority, then higher AoI first; each takes its best-gain open subcarrier
// at max power until every subcarrier holds two users.
JointAction max_aoi_greedy_action(const EnvState& s, const EnvConfig& cfg);

// Number of joint actions satisfying C1-C3 for this configuration.
long long count_feasible_actions(const EnvConfig& cfg);

// Exhaustive search over all feasible joint actions, simulating one slot on
// the state's frozen gains. Ties resolve to the lexicographically smallest
// action (idle < (subcarrier, power) in ascending order). Throws SizeError
// when more than 10^6 actions are feasible.
std::pair<JointAction, double> brute_force_best_action(const EnvState& s, const EnvConfig& cfg);

class Policy {
  public:
    virtual ~Policy() = default;
    virtual JointAction act(const EnvState& s, const EnvConfig& cfg, Rng& rng) = 0;
    virtual std::string name() const = 0;
};

enum class BaselineKind { random, round_robin, max_aoi_greedy, brute_force };

std::unique_ptr<Policy> make_baseline(BaselineKind kind);

// Wraps an actor network; samples from the masked distributions or takes the
// greedy argmax.
std::unique_ptr<Policy> make_actor_policy(ActorNet& actor, bool greedy);

struct PerUserSummary {
    double mean_aoi = 0.0;
    double violation_rate = 0.0;
    double completions_per_episode = 0.0;
};

struct PolicySummary {
    std::string policy;
    uint64_t seed = 0;
    int episodes = 0;
    double mean_reward = 0.0;      // per slot
    double mean_aoi = 0.0;         // over users and slots
    double violation_rate = 0.0;   // over users and slots
    std::vector<PerUserSummary> per_user;
};

// Runs `episodes` episodes with per-episode rng streams derived from seed;
// deterministic regardless of scheduling. Optionally records every step into
// `trace` (episodes concatenated, slot index restarting at 1).
PolicySummary evaluate_policy(Policy& policy, const EnvConfig& cfg, int episodes, uint64_t seed,
                              std::vector<TraceRow>* trace = nullptr);

}  // namespace aoisim
