#include "aoisim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace aoisim {

void PPOConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("ppo.gamma must be in (0,1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must be in [0,1]");
    if (clip_eps <= 0.0) throw ConfigError("ppo.clip_eps must be > 0");
    if (c1 < 0.0) throw ConfigError("ppo.c1 must be >= 0");
    if (c2 < 0.0) throw ConfigError("ppo.c2 must be >= 0");
    if (epochs < 1) throw ConfigError("ppo.epochs must be >= 1");
    if (batch < 1) throw ConfigError("ppo.batch must be >= 1");
    if (buffer < 1) throw ConfigError("ppo.buffer must be >= 1");
    if (lr < 0.0) throw ConfigError("ppo.lr must be >= 0");
    if (episodes < 1) throw ConfigError("ppo.episodes must be >= 1");
    if (grad_clip < 0.0) throw ConfigError("ppo.grad_clip must be >= 0");
    if (grad_shards < 1) throw ConfigError("ppo.grad_shards must be >= 1");
}

Advantages compute_gae(const RolloutBuffer& buffer, double gamma, double gae_lambda) {
    size_t n = buffer.size();
    Advantages out;
    out.adv.resize(n);
    out.ret.resize(n);
    double gae = 0.0;
    double next_value = buffer.tail_bootstrap;
    for (size_t i = n; i-- > 0;) {
        const RolloutStep& s = buffer.steps[i];
        if (s.terminal) {
            next_value = 0.0;
            gae = 0.0;
        }
        double delta = s.reward + gamma * next_value - s.value;
        gae = delta + gamma * gae_lambda * gae;
        out.adv[i] = gae;
        out.ret[i] = gae + s.value;
        next_value = s.value;
    }
    return out;
}

namespace {

// [B,1] of min(v*A, clip(v)*A) terms.
Value clip_terms(Tape& tape, Value logp_new, const std::vector<double>& logp_old,
                 const std::vector<double>& advantages, double eps) {
    Value ratio = tape.exp(tape.sub(logp_new, tape.input(Tensor::column(logp_old))));
    Value adv = tape.input(Tensor::column(advantages));
    Value unclipped = tape.mul(ratio, adv);
    Value clipped = tape.mul(tape.clamp(ratio, 1.0 - eps, 1.0 + eps), adv);
    return tape.minimum(unclipped, clipped);
}

struct ShardSums {
    double clip = 0.0;
    double vloss = 0.0;
    double entropy = 0.0;
};

// Loss contribution of a contiguous index range on its own tape. The scalar
// built here is (-clip + c1*vloss - c2*entropy) / batch_size, so summing the
// per-shard gradients reproduces the full-batch mean loss gradient.
ShardSums loss_shard(Tape& tape, const RolloutBuffer& buffer, std::span<const int> selection,
                     const std::vector<double>& adv_norm, const std::vector<double>& targets,
                     size_t first, size_t count, ActorNet& actor, CriticNet& critic,
                     const EnvConfig& env_cfg, const PPOConfig& cfg, size_t batch_size,
                     Value* loss_out) {
    std::vector<Value> logps, values, entropies;
    std::vector<double> old_logp, adv_sel;
    logps.reserve(count);
    values.reserve(count);
    entropies.reserve(count);
    old_logp.reserve(count);
    adv_sel.reserve(count);
    for (size_t j = first; j < first + count; ++j) {
        const RolloutStep& step = buffer.steps[selection[j]];
        ActorOutput out = actor.forward(tape, step.features);
        ActionEval eval = evaluate_action(tape, out, step.action, env_cfg);
        logps.push_back(eval.logp);
        entropies.push_back(eval.entropy);
        values.push_back(critic.forward(tape, step.features));
        old_logp.push_back(step.logp);
        adv_sel.push_back(adv_norm[j]);
    }
    Value logp_new = tape.stack_scalars(logps);
    Value clip_sum = tape.sum(clip_terms(tape, logp_new, old_logp, adv_sel, cfg.clip_eps));

    Value v = tape.stack_scalars(values);
    std::vector<double> target_sel(targets.begin() + first, targets.begin() + first + count);
    Value vdiff = tape.sub(v, tape.input(Tensor::column(target_sel)));
    Value vloss_sum = tape.sum(tape.mul(vdiff, vdiff));

    Value ent_sum = tape.sum(tape.stack_scalars(entropies));

    double inv_b = 1.0 / static_cast<double>(batch_size);
    Value loss = tape.add(tape.add(tape.scale(clip_sum, -inv_b), tape.scale(vloss_sum, cfg.c1 * inv_b)),
                          tape.scale(ent_sum, -cfg.c2 * inv_b));
    if (loss_out != nullptr) *loss_out = loss;

    ShardSums sums;
    sums.clip = tape.val(clip_sum).item();
    sums.vloss = tape.val(vloss_sum).item();
    sums.entropy = tape.val(ent_sum).item();
    return sums;
}

void normalize_advantages(const Advantages& advantages, std::span<const int> selection,
                          std::vector<double>& adv_norm) {
    size_t n = selection.size();
    adv_norm.resize(n);
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += advantages.adv[selection[j]];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
        double d = advantages.adv[selection[j]] - mean;
        var += d * d;
    }
    double std = std::sqrt(var / static_cast<double>(n));
    for (size_t j = 0; j < n; ++j) adv_norm[j] = (advantages.adv[selection[j]] - mean) / (std + 1e-8);
}

std::vector<double> value_targets(const RolloutBuffer& buffer, const Advantages& advantages,
                                  std::span<const int> selection, const PPOConfig& cfg) {
    std::vector<double> t(selection.size());
    for (size_t j = 0; j < selection.size(); ++j) {
        int i = selection[j];
        t[j] = cfg.one_step_value_target ? buffer.steps[i].reward : advantages.ret[i];
    }
    return t;
}

}  // namespace

Value clip_objective(Tape& tape, Value logp_new, const std::vector<double>& logp_old,
                     const std::vector<double>& advantages, double eps) {
    return tape.mean(clip_terms(tape, logp_new, logp_old, advantages, eps));
}

bool LossParts::finite() const {
    return std::isfinite(total) && std::isfinite(clip_obj) && std::isfinite(value_loss) &&
           std::isfinite(entropy);
}

LossParts total_loss(const RolloutBuffer& buffer, const Advantages& advantages,
                     std::span<const int> selection, ActorNet& actor, CriticNet& critic,
                     const EnvConfig& env_cfg, const PPOConfig& cfg, bool with_grad) {
    std::vector<double> adv_norm;
    normalize_advantages(advantages, selection, adv_norm);
    std::vector<double> targets = value_targets(buffer, advantages, selection, cfg);

    Tape tape(with_grad);
    Value loss;
    ShardSums sums = loss_shard(tape, buffer, selection, adv_norm, targets, 0, selection.size(),
                                actor, critic, env_cfg, cfg, selection.size(), &loss);
    if (with_grad) tape.backward(loss);

    double inv_b = 1.0 / static_cast<double>(selection.size());
    LossParts parts;
    parts.clip_obj = sums.clip * inv_b;
    parts.value_loss = sums.vloss * inv_b;
    parts.entropy = sums.entropy * inv_b;
    parts.total = -(parts.clip_obj - cfg.c1 * parts.value_loss + cfg.c2 * parts.entropy);
    return parts;
}

CollectStats collect_rollouts(RolloutBuffer& buffer, ActorNet& actor, CriticNet& critic,
                              const EnvConfig& env_cfg, uint64_t run_seed,
                              long first_episode_index, long max_episodes) {
    if (!buffer.steps.empty()) throw ContractError("collect_rollouts needs an empty buffer");
    int horizon = env_cfg.horizon;
    if (buffer.capacity < static_cast<size_t>(horizon))
        throw ContractError("buffer capacity must cover at least one episode horizon");
    long cap_episodes = static_cast<long>(buffer.capacity) / horizon;
    long k_full = std::min(cap_episodes, max_episodes);
    size_t tail_len = 0;
    if (k_full == cap_episodes)
        tail_len = buffer.capacity - static_cast<size_t>(k_full) * horizon;

    size_t planned = static_cast<size_t>(k_full) * horizon + tail_len;
    buffer.steps.assign(planned, RolloutStep{});
    buffer.tail_bootstrap = 0.0;

    CollectStats stats;
    stats.episodes.assign(k_full, EpisodeMetrics{});
    stats.episodes_started = k_full + (tail_len > 0 ? 1 : 0);
    stats.steps = planned;

    long tasks = stats.episodes_started;
    parallel_shards(static_cast<int>(tasks), [&](int task) {
        bool is_tail = tail_len > 0 && task == k_full;
        size_t slice_begin = static_cast<size_t>(task) * horizon;
        int steps_to_run = is_tail ? static_cast<int>(tail_len) : horizon;
        long episode_index = first_episode_index + task;

        Rng env_rng(mix_seed(mix_seed(run_seed, 0x524f4c4c /* "ROLL" */), static_cast<uint64_t>(episode_index)));
        Rng act_rng(mix_seed(mix_seed(run_seed, 0x41435452 /* "ACTR" */), static_cast<uint64_t>(episode_index)));
        EnvState state = env_reset(env_cfg, env_rng());

        double reward_sum = 0.0, entropy_sum = 0.0;
        long aoi_sum = 0, violations = 0, completed = 0;

        for (int t = 0; t < steps_to_run; ++t) {
            Tensor features = state_features(state, env_cfg);
            Tape tape(false);
            ActorOutput out = actor.forward(tape, features);
            SampledAction sampled = sample_masked_action(tape.val(out.channel_logits),
                                                         tape.val(out.power_logits), env_cfg, act_rng);
            double value = tape.val(critic.forward(tape, features)).item();
            StepResult step = env_step(state, sampled.action, env_cfg, env_rng);

            RolloutStep& slot = buffer.steps[slice_begin + t];
            slot.features = std::move(features);
            slot.action = sampled.action;
            slot.logp = sampled.logp;
            slot.reward = step.reward;
            slot.value = value;
            slot.terminal = step.terminal ? 1 : 0;

            reward_sum += step.reward;
            double ent = 0.0;
            for (double h : sampled.entropy_per_user) ent += h;
            entropy_sum += ent;
            for (int u = 0; u < env_cfg.users; ++u) {
                aoi_sum += step.next.aoi[u];
                violations += step.violated[u];
                completed += step.completed[u];
            }
            state = std::move(step.next);
        }

        if (is_tail) {
            // Mid-episode cut: remember the bootstrap value of the next state.
            Tensor features = state_features(state, env_cfg);
            Tape tape(false);
            buffer.tail_bootstrap = tape.val(critic.forward(tape, features)).item();
        } else {
            EpisodeMetrics& m = stats.episodes[task];
            m.episode = episode_index;
            m.mean_reward = reward_sum / horizon;
            m.mean_aoi = static_cast<double>(aoi_sum) / (static_cast<double>(horizon) * env_cfg.users);
            m.violation_rate = static_cast<double>(violations) / (static_cast<double>(horizon) * env_cfg.users);
            m.mean_entropy = entropy_sum / horizon;
            m.completed_tasks = completed;
        }
    });
    return stats;
}

UpdateStats ppo_update(RolloutBuffer& buffer, const Advantages& advantages, ActorNet& actor,
                       CriticNet& critic, const EnvConfig& env_cfg, const PPOConfig& cfg, Rng& rng) {
    size_t n = buffer.size();
    if (n == 0) throw ContractError("ppo_update on an empty buffer");

    std::vector<Parameter*> params = actor.params();
    {
        std::vector<Parameter*> cp = critic.params();
        params.insert(params.end(), cp.begin(), cp.end());
    }

    UpdateStats stats;
    {
        double mean = 0.0;
        for (double a : advantages.adv) mean += a;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double a : advantages.adv) var += (a - mean) * (a - mean);
        stats.adv_mean = mean;
        stats.adv_std = std::sqrt(var / static_cast<double>(n));
    }

    std::vector<int> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    LossParts accum;
    int minibatches = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(order, rng);
        for (size_t begin = 0; begin < n; begin += static_cast<size_t>(cfg.batch)) {
            size_t count = std::min(static_cast<size_t>(cfg.batch), n - begin);
            std::span<const int> selection(order.data() + begin, count);

            std::vector<double> adv_norm;
            normalize_advantages(advantages, selection, adv_norm);
            std::vector<double> targets = value_targets(buffer, advantages, selection, cfg);

            for (Parameter* p : params) p->zero_grad();

            int shards = std::min<int>(cfg.grad_shards, static_cast<int>(count));
            std::vector<ShardSums> sums(shards);
            std::vector<std::unordered_map<Parameter*, Tensor>> sinks(shards);
            parallel_shards(shards, [&](int s) {
                size_t lo = count * static_cast<size_t>(s) / shards;
                size_t hi = count * static_cast<size_t>(s + 1) / shards;
                if (lo == hi) return;
                Tape tape(true);
                Value loss;
                sums[s] = loss_shard(tape, buffer, selection, adv_norm, targets, lo, hi - lo, actor,
                                     critic, env_cfg, cfg, count, &loss);
                tape.backward(loss, sinks[s]);
            });

            // Ordered reduction keeps the update bit-reproducible.
            ShardSums total;
            for (int s = 0; s < shards; ++s) {
                total.clip += sums[s].clip;
                total.vloss += sums[s].vloss;
                total.entropy += sums[s].entropy;
                for (Parameter* p : params) {
                    auto it = sinks[s].find(p);
                    if (it == sinks[s].end()) continue;
                    for (size_t i = 0; i < p->grad.data.size(); ++i)
                        p->grad.data[i] += it->second.data[i];
                }
            }

            clip_grad_norm(params, cfg.grad_clip);
            stats.grad_norm_last = grad_norm(params);
            adam_step(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

            double inv_b = 1.0 / static_cast<double>(count);
            LossParts parts;
            parts.clip_obj = total.clip * inv_b;
            parts.value_loss = total.vloss * inv_b;
            parts.entropy = total.entropy * inv_b;
            parts.total = -(parts.clip_obj - cfg.c1 * parts.value_loss + cfg.c2 * parts.entropy);
            if (!parts.finite() || !std::isfinite(stats.grad_norm_last)) {
                std::ostringstream os;
                os << "non-finite PPO loss (clip=" << parts.clip_obj << ", vloss=" << parts.value_loss
                   << ", entropy=" << parts.entropy << ", grad_norm=" << stats.grad_norm_last << ")";
                throw TrainDivergedError(os.str());
            }
            accum.clip_obj += parts.clip_obj;
            accum.value_loss += parts.value_loss;
            accum.entropy += parts.entropy;
            accum.total += parts.total;
            minibatches += 1;
        }
    }

    stats.minibatches = minibatches;
    stats.mean.clip_obj = accum.clip_obj / minibatches;
    stats.mean.value_loss = accum.value_loss / minibatches;
    stats.mean.entropy = accum.entropy / minibatches;
    stats.mean.total = accum.total / minibatches;
    buffer.clear();
    return stats;
}

namespace {

// Attention averaged over one greedy probe episode with a fixed seed, so
// successive snapshots differ only through the parameters.
std::vector<std::vector<Tensor>> attention_probe(ActorNet& actor, const EnvConfig& env_cfg,
                                                 uint64_t seed) {
    Rng env_rng(mix_seed(seed, 0x534e4150 /* "SNAP" */));
    EnvState state = env_reset(env_cfg, env_rng());
    std::vector<std::vector<Tensor>> mean;
    int steps = 0;
    for (int t = 0; t < env_cfg.horizon; ++t) {
        Tensor features = state_features(state, env_cfg);
        Tape tape(false);
        ActorOutput out = actor.forward(tape, features);
        if (out.attention.empty()) return {};
        if (mean.empty()) {
            mean = out.attention;
        } else {
            for (size_t l = 0; l < mean.size(); ++l)
                for (size_t h = 0; h < mean[l].size(); ++h)
                    for (size_t i = 0; i < mean[l][h].data.size(); ++i)
                        mean[l][h].data[i] += out.attention[l][h].data[i];
        }
        steps += 1;
        JointAction action = greedy_masked_action(tape.val(out.channel_logits),
                                                  tape.val(out.power_logits), env_cfg);
        StepResult step = env_step(state, action, env_cfg, env_rng);
        state = std::move(step.next);
    }
    for (auto& layer : mean)
        for (Tensor& head : layer)
            for (double& v : head.data) v /= steps;
    return mean;
}

std::string param_norms_string(const std::vector<Parameter*>& params) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double v : p->value.data) sq += v * v;
    std::ostringstream os;
    os << "param_norm=" << std::sqrt(sq);
    return os.str();
}

}  // namespace

TrainResult train(const EnvConfig& env_cfg, const NetConfig& net_cfg, const PPOConfig& ppo_cfg,
                  PolicyArch arch, uint64_t seed, const TrainSinks& sinks,
                  const std::vector<double>& snapshot_fracs) {
    env_cfg.validate();
    net_cfg.validate();
    ppo_cfg.validate();
    if (ppo_cfg.buffer < env_cfg.horizon)
        throw ConfigError("ppo.buffer must be >= env.horizon");

    TrainResult result;
    result.actor = make_actor(arch, net_cfg, seed);
    result.critic = make_critic(arch, net_cfg, seed);
    result.best_mean_reward = -std::numeric_limits<double>::infinity();

    std::set<long> snapshots;
    for (double f : snapshot_fracs) {
        long e = std::llround(f * static_cast<double>(ppo_cfg.episodes));
        snapshots.insert(std::clamp<long>(e, 0, ppo_cfg.episodes - 1));
    }
    auto emit_snapshot = [&](long episode) {
        if (!sinks.on_attention) return;
        auto attn = attention_probe(*result.actor, env_cfg, seed);
        if (!attn.empty()) sinks.on_attention(episode, attn);
    };
    if (snapshots.count(0)) emit_snapshot(0);

    RolloutBuffer buffer(static_cast<size_t>(ppo_cfg.buffer));
    Rng update_rng(mix_seed(seed, 0x55504454 /* "UPDT" */));
    long episodes_started = 0;
    long episodes_completed = 0;
    UpdateStats last_update;

    while (episodes_completed < ppo_cfg.episodes) {
        long remaining = ppo_cfg.episodes - episodes_completed;
        CollectStats collected = collect_rollouts(buffer, *result.actor, *result.critic, env_cfg,
                                                  seed, episodes_started, remaining);

        for (const EpisodeMetrics& em : collected.episodes) {
            MetricsRow row;
            row.episode = em.episode;
            row.mean_reward = em.mean_reward;
            row.mean_aoi = em.mean_aoi;
            row.violation_rate = em.violation_rate;
            row.mean_entropy = em.mean_entropy;
            row.completed_tasks = em.completed_tasks;
            row.clip_obj = last_update.mean.clip_obj;
            row.value_loss = last_update.mean.value_loss;
            row.loss_entropy = last_update.mean.entropy;
            row.total_loss = last_update.mean.total;
            if (sinks.on_metrics) sinks.on_metrics(row);
            if (em.mean_reward > result.best_mean_reward) {
                result.best_mean_reward = em.mean_reward;
                result.best_episode = em.episode;
                if (sinks.on_best) {
                    std::vector<Parameter*> params = result.actor->params();
                    std::vector<Parameter*> cp = result.critic->params();
                    params.insert(params.end(), cp.begin(), cp.end());
                    sinks.on_best(em.episode, em.mean_reward, params);
                }
            }
        }
        episodes_started += collected.episodes_started;
        episodes_completed += static_cast<long>(collected.episodes.size());

        Advantages adv = compute_gae(buffer, ppo_cfg.gamma, ppo_cfg.gae_lambda);
        try {
            last_update = ppo_update(buffer, adv, *result.actor, *result.critic, env_cfg, ppo_cfg,
                                     update_rng);
        } catch (const TrainDivergedError& e) {
            std::vector<Parameter*> params = result.actor->params();
            std::ostringstream os;
            os << e.what() << " [seed=" << seed << ", episode=" << episodes_completed << ", "
               << param_norms_string(params) << "]";
            throw TrainDivergedError(os.str());
        }

        for (long snap : snapshots) {
            if (snap > 0 && snap >= episodes_completed - static_cast<long>(collected.episodes.size()) + 1 &&
                snap <= episodes_completed) {
                // A snapshot point inside this fill: probe with the updated parameters.
                emit_snapshot(snap);
            }
        }
    }

    result.episodes = episodes_completed;
    return result;
}

}  // namespace aoisim
