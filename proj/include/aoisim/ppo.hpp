#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "aoisim/env.hpp"
#include "aoisim/nets.hpp"

namespace aoisim {

struct PPOConfig {
    double gamma = 0.99;
    double gae_lambda = 0.97;
    double clip_eps = 0.2;
    double c1 = 0.5;   // value-loss weight
    double c2 = 0.05;  // entropy-bonus weight
    int epochs = 4;
    int batch = 64;
    long buffer = 16384;
    double lr = 5e-5;
    long episodes = 50000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Value target is the GAE return (advantage + old value); this switches to
    // the literal one-step reward for comparison.
    bool one_step_value_target = false;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
    // Minibatch gradients are computed over this many independent shards and
    // reduced in shard order, so results do not depend on thread scheduling.
    int grad_shards = 8;

    void validate() const;
};

struct RolloutStep {
    Tensor features;
    JointAction action;
    double logp = 0.0;
    double reward = 0.0;
    double value = 0.0;
    uint8_t terminal = 0;
};

struct RolloutBuffer {
    size_t capacity = 0;
    std::vector<RolloutStep> steps;
    // Critic value of the state following the last stored step when that step
    // is not terminal (a mid-episode cut at the capacity boundary).
    double tail_bootstrap = 0.0;

    explicit RolloutBuffer(size_t capacity_ = 0) : capacity(capacity_) {}
    size_t size() const { return steps.size(); }
    bool full() const { return steps.size() >= capacity; }
    void clear() {
        steps.clear();
        tail_bootstrap = 0.0;
    }
};

struct Advantages {
    std::vector<double> adv;  // unnormalized GAE
    std::vector<double> ret;  // adv + value (the critic target)
};

// Backward-recursion GAE over terminal-delimited segments; bootstraps 0 past
// a terminal and buffer.tail_bootstrap past a non-terminal cut.
Advantages compute_gae(const RolloutBuffer& buffer, double gamma, double gae_lambda);

// Differentiable clipped surrogate, mean over the batch (a quantity to
// maximize). logp_new is [B,1] on the tape; old log-probs and advantages are
// constants from the rollout.
Value clip_objective(Tape& tape, Value logp_new, const std::vector<double>& logp_old,
                     const std::vector<double>& advantages, double eps);

struct LossParts {
    double total = 0.0;      // minimized: -(clip - c1*value_loss + c2*entropy)
    double clip_obj = 0.0;   // mean clipped surrogate
    double value_loss = 0.0; // mean squared error to the value target
    double entropy = 0.0;    // mean policy entropy
    bool finite() const;
};

// Loss over the selected steps on a single tape. Advantages are normalized
// over the selection (batch mean/std) before entering the surrogate; the raw
// values stay available through `advantages`. When with_grad, backward() runs
// and parameter grads accumulate.
LossParts total_loss(const RolloutBuffer& buffer, const Advantages& advantages,
                     std::span<const int> selection, ActorNet& actor, CriticNet& critic,
                     const EnvConfig& env_cfg, const PPOConfig& cfg, bool with_grad);

struct EpisodeMetrics {
    long episode = 0;
    double mean_reward = 0.0;
    double mean_aoi = 0.0;
    double violation_rate = 0.0;
    double mean_entropy = 0.0;  // sampled per-step entropy, summed over users
    long completed_tasks = 0;
};

struct CollectStats {
    std::vector<EpisodeMetrics> episodes;  // completed episodes, in order
    long episodes_started = 0;             // includes a capacity-cut partial episode
    size_t steps = 0;
};

// Fills the buffer with at most `max_episodes` whole episodes (plus a partial
// episode when capacity is not a horizon multiple). Episodes run in parallel;
// rng streams derive from (run_seed, global episode index), so the buffer
// contents do not depend on scheduling. Buffer must be empty.
CollectStats collect_rollouts(RolloutBuffer& buffer, ActorNet& actor, CriticNet& critic,
                              const EnvConfig& env_cfg, uint64_t run_seed,
                              long first_episode_index, long max_episodes);

struct UpdateStats {
    LossParts mean;       // averaged over minibatches
    int minibatches = 0;
    double adv_mean = 0.0;  // unnormalized, whole buffer
    double adv_std = 0.0;
    double grad_norm_last = 0.0;
};

// epochs x shuffled minibatches of Adam steps on actor and critic; clears the
// buffer. Throws TrainDivergedError when the loss goes non-finite.
UpdateStats ppo_update(RolloutBuffer& buffer, const Advantages& advantages, ActorNet& actor,
                       CriticNet& critic, const EnvConfig& env_cfg, const PPOConfig& cfg, Rng& rng);

struct MetricsRow {
    long episode = 0;
    double mean_reward = 0.0;
    double mean_aoi = 0.0;
    double violation_rate = 0.0;
    double mean_entropy = 0.0;
    long completed_tasks = 0;
    // components of the most recent update (zeros before the first one)
    double clip_obj = 0.0;
    double value_loss = 0.0;
    double loss_entropy = 0.0;
    double total_loss = 0.0;
};

struct TrainSinks {
    std::function<void(const MetricsRow&)> on_metrics;
    // Mean per-head attention over a fixed greedy probe episode; only called
    // for architectures that produce attention.
    std::function<void(long episode, const std::vector<std::vector<Tensor>>& attention)> on_attention;
    // The parameters handed over produced a new best episode reward; fires
    // before the update that follows the episode's fill.
    std::function<void(long episode, double mean_reward, const std::vector<Parameter*>& params)>
        on_best;
};

struct TrainResult {
    std::unique_ptr<ActorNet> actor;
    std::unique_ptr<CriticNet> critic;
    long episodes = 0;
    double best_mean_reward = 0.0;
    long best_episode = -1;
};

// Full loop: collect -> GAE -> update until the episode budget is spent.
// snapshot_fracs positions attention probes as fractions of the budget.
TrainResult train(const EnvConfig& env_cfg, const NetConfig& net_cfg, const PPOConfig& ppo_cfg,
                  PolicyArch arch, uint64_t seed, const TrainSinks& sinks,
                  const std::vector<double>& snapshot_fracs);

}  // namespace aoisim
