#include "aoisim/nets.hpp"

#include <cmath>

namespace aoisim {

NetConfig NetConfig::for_env(const EnvConfig& env, int d_model, int n_heads, int n_layers, int d_ff) {
    NetConfig cfg;
    cfg.d_in = env.feature_dim();
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.n_layers = n_layers;
    cfg.d_ff = d_ff;
    cfg.n_channel_actions = env.channel_actions();
    cfg.n_power_actions = env.power_actions();
    cfg.max_users = env.users;
    cfg.validate();
    return cfg;
}

void NetConfig::validate() const {
    if (d_in < 1) throw ConfigError("net.d_in must be >= 1");
    if (d_model < 1) throw ConfigError("net.d_model must be >= 1");
    if (n_heads < 1) throw ConfigError("net.heads must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("net.d_model must be divisible by net.heads");
    if (n_layers < 1) throw ConfigError("net.layers must be >= 1");
    if (d_ff < 1) throw ConfigError("net.d_ff must be >= 1");
    if (n_channel_actions < 1 || n_power_actions < 1 || max_users < 1)
        throw ConfigError("net action/user dimensions must be >= 1");
}

namespace {

Tensor xavier(std::vector<int> shape, Rng& rng) {
    int fan_in = shape[0], fan_out = shape[1];
    double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = gaussian(rng) * std;
    return t;
}

Tensor small_normal(std::vector<int> shape, Rng& rng, double std) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = gaussian(rng) * std;
    return t;
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

LinearParams::LinearParams(const std::string& name, int in, int out, Rng& rng)
    : w(name + ".w", xavier({in, out}, rng)), b(name + ".b", Tensor::zeros({1, out})) {}

Value LinearParams::apply(Tape& tape, Value x) {
    return tape.add_row_broadcast(tape.matmul(x, tape.param(w)), tape.param(b));
}

void LinearParams::collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
}

HeadParams::HeadParams(const std::string& name, int d_model, int n_out, Rng& rng)
    : l1(name + ".l1", d_model, d_model, rng), l2(name + ".l2", d_model, n_out, rng) {}

Value HeadParams::apply(Tape& tape, Value x) {
    return l2.apply(tape, tape.relu(l1.apply(tape, x)));
}

void HeadParams::collect(std::vector<Parameter*>& out) {
    l1.collect(out);
    l2.collect(out);
}

Value embed_features(Tape& tape, Value x, LinearParams& proj, Parameter& pos_table) {
    int users = tape.val(x).rows();
    if (users > pos_table.value.rows())
        throw ConfigError("positional table covers " + std::to_string(pos_table.value.rows()) +
                          " users but the input has " + std::to_string(users));
    Value e = proj.apply(tape, x);
    Value pos = tape.slice_rows(tape.param(pos_table), 0, users);
    return tape.add(e, pos);
}

std::array<Value, 3> project_qkv(Tape& tape, Value x, Parameter& wq, Parameter& wk, Parameter& wv) {
    return {tape.matmul(x, tape.param(wq)), tape.matmul(x, tape.param(wk)),
            tape.matmul(x, tape.param(wv))};
}

Value attention_scores(Tape& tape, Value q, Value k, int d_model) {
    Value scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_model)));
    return tape.softmax_rows(scores);
}

Value attention_mix(Tape& tape, Value alpha, Value v) { return tape.matmul(alpha, v); }

EncoderLayer::EncoderLayer(const std::string& name, const NetConfig& cfg, Rng& rng)
    : wq(name + ".wq", xavier({cfg.d_model, cfg.d_model}, rng)),
      wk(name + ".wk", xavier({cfg.d_model, cfg.d_model}, rng)),
      wv(name + ".wv", xavier({cfg.d_model, cfg.d_model}, rng)),
      out_proj(name + ".out", cfg.d_model, cfg.d_model, rng),
      ln1_gain(name + ".ln1.gain", Tensor::full({1, cfg.d_model}, 1.0)),
      ln1_bias(name + ".ln1.bias", Tensor::zeros({1, cfg.d_model})),
      ff1(name + ".ff1", cfg.d_model, cfg.d_ff, rng),
      ff2(name + ".ff2", cfg.d_ff, cfg.d_model, rng),
      ln2_gain(name + ".ln2.gain", Tensor::full({1, cfg.d_model}, 1.0)),
      ln2_bias(name + ".ln2.bias", Tensor::zeros({1, cfg.d_model})),
      d_model(cfg.d_model),
      n_heads(cfg.n_heads) {}

Value EncoderLayer::forward(Tape& tape, Value x, std::vector<Tensor>* attention_out) {
    auto [q, k, v] = project_qkv(tape, x, wq, wk, wv);
    int dh = d_model / n_heads;
    std::vector<Value> mixed;
    mixed.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Value qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        Value kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        Value vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        Value alpha = attention_scores(tape, qh, kh, d_model);
        if (attention_out != nullptr) attention_out->push_back(tape.val(alpha));
        mixed.push_back(attention_mix(tape, alpha, vh));
    }
    Value z = n_heads == 1 ? mixed[0] : tape.concat_cols(mixed);
    Value attn = out_proj.apply(tape, z);
    Value x1 = tape.layer_norm(tape.add(x, attn), tape.param(ln1_gain), tape.param(ln1_bias),
                               kLayerNormEps);
    Value ff = ff2.apply(tape, tape.relu(ff1.apply(tape, x1)));
    return tape.layer_norm(tape.add(x1, ff), tape.param(ln2_gain), tape.param(ln2_bias),
                           kLayerNormEps);
}

void EncoderLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&wq);
    out.push_back(&wk);
    out.push_back(&wv);
    out_proj.collect(out);
    out.push_back(&ln1_gain);
    out.push_back(&ln1_bias);
    ff1.collect(out);
    ff2.collect(out);
    out.push_back(&ln2_gain);
    out.push_back(&ln2_bias);
}

namespace {

std::vector<EncoderLayer> make_encoder_stack(const std::string& name, const NetConfig& cfg, Rng& rng) {
    std::vector<EncoderLayer> layers;
    layers.reserve(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l)
        layers.emplace_back(name + ".layer" + std::to_string(l), cfg, rng);
    return layers;
}

std::vector<LinearParams> make_mlp_stack(const std::string& name, const NetConfig& cfg, Rng& rng) {
    std::vector<LinearParams> layers;
    layers.reserve(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l)
        layers.emplace_back(name + ".hidden" + std::to_string(l), cfg.d_model, cfg.d_model, rng);
    return layers;
}

}  // namespace

TransformerActor::TransformerActor(const NetConfig& cfg, uint64_t seed, const std::string& name)
    : cfg_(cfg),
      init_rng_(mix_seed(seed, 0x7472616e /* "tran" */)),
      embed_(name + ".embed", cfg.d_in, cfg.d_model, init_rng_),
      pos_table_(name + ".pos", small_normal({cfg.max_users, cfg.d_model}, init_rng_, 0.02)),
      layers_(make_encoder_stack(name, cfg, init_rng_)),
      channel_head_(name + ".channel_head", cfg.d_model, cfg.n_channel_actions, init_rng_),
      power_head_(name + ".power_head", cfg.d_model, cfg.n_power_actions, init_rng_) {}

Value TransformerActor::encode(Tape& tape, const Tensor& features,
                               std::vector<std::vector<Tensor>>* attention) {
    Value x = embed_features(tape, tape.input(features), embed_, pos_table_);
    for (EncoderLayer& layer : layers_) {
        std::vector<Tensor> layer_attn;
        x = layer.forward(tape, x, attention != nullptr ? &layer_attn : nullptr);
        if (attention != nullptr) attention->push_back(std::move(layer_attn));
    }
    return x;
}

ActorOutput TransformerActor::forward(Tape& tape, const Tensor& features) {
    ActorOutput out;
    Value x = encode(tape, features, &out.attention);
    out.channel_logits = channel_head_.apply(tape, x);
    out.power_logits = power_head_.apply(tape, x);
    return out;
}

std::vector<Parameter*> TransformerActor::params() {
    std::vector<Parameter*> out;
    embed_.collect(out);
    out.push_back(&pos_table_);
    for (EncoderLayer& l : layers_) l.collect(out);
    channel_head_.collect(out);
    power_head_.collect(out);
    return out;
}

TransformerCritic::TransformerCritic(const NetConfig& cfg, uint64_t seed, const std::string& name)
    : cfg_(cfg),
      init_rng_(mix_seed(seed, 0x63726974 /* "crit" */)),
      embed_(name + ".embed", cfg.d_in, cfg.d_model, init_rng_),
      pos_table_(name + ".pos", small_normal({cfg.max_users, cfg.d_model}, init_rng_, 0.02)),
      layers_(make_encoder_stack(name, cfg, init_rng_)),
      value_head_(name + ".value_head", cfg.d_model, 1, init_rng_) {}

Value TransformerCritic::forward(Tape& tape, const Tensor& features) {
    Value x = embed_features(tape, tape.input(features), embed_, pos_table_);
    for (EncoderLayer& layer : layers_) x = layer.forward(tape, x, nullptr);
    Value pooled = tape.mean_rows(x);
    return value_head_.apply(tape, pooled);
}

std::vector<Parameter*> TransformerCritic::params() {
    std::vector<Parameter*> out;
    embed_.collect(out);
    out.push_back(&pos_table_);
    for (EncoderLayer& l : layers_) l.collect(out);
    value_head_.collect(out);
    return out;
}

MlpActor::MlpActor(const NetConfig& cfg, uint64_t seed, const std::string& name)
    : cfg_(cfg),
      init_rng_(mix_seed(seed, 0x6d6c7061 /* "mlpa" */)),
      embed_(name + ".embed", cfg.d_in, cfg.d_model, init_rng_),
      hidden_(make_mlp_stack(name, cfg, init_rng_)),
      channel_head_(name + ".channel_head", cfg.d_model, cfg.n_channel_actions, init_rng_),
      power_head_(name + ".power_head", cfg.d_model, cfg.n_power_actions, init_rng_) {}

ActorOutput MlpActor::forward(Tape& tape, const Tensor& features) {
    Value x = tape.relu(embed_.apply(tape, tape.input(features)));
    for (LinearParams& h : hidden_) x = tape.relu(h.apply(tape, x));
    ActorOutput out;
    out.channel_logits = channel_head_.apply(tape, x);
    out.power_logits = power_head_.apply(tape, x);
    return out;
}

std::vector<Parameter*> MlpActor::params() {
    std::vector<Parameter*> out;
    embed_.collect(out);
    for (LinearParams& h : hidden_) h.collect(out);
    channel_head_.collect(out);
    power_head_.collect(out);
    return out;
}

MlpCritic::MlpCritic(const NetConfig& cfg, uint64_t seed, const std::string& name)
    : cfg_(cfg),
      init_rng_(mix_seed(seed, 0x6d6c7063 /* "mlpc" */)),
      embed_(name + ".embed", cfg.d_in, cfg.d_model, init_rng_),
      hidden_(make_mlp_stack(name, cfg, init_rng_)),
      value_head_(name + ".value_head", cfg.d_model, 1, init_rng_) {}

Value MlpCritic::forward(Tape& tape, const Tensor& features) {
    Value x = tape.relu(embed_.apply(tape, tape.input(features)));
    for (LinearParams& h : hidden_) x = tape.relu(h.apply(tape, x));
    return value_head_.apply(tape, tape.mean_rows(x));
}

std::vector<Parameter*> MlpCritic::params() {
    std::vector<Parameter*> out;
    embed_.collect(out);
    for (LinearParams& h : hidden_) h.collect(out);
    value_head_.collect(out);
    return out;
}

std::unique_ptr<ActorNet> make_actor(PolicyArch arch, const NetConfig& cfg, uint64_t seed) {
    if (arch == PolicyArch::transformer) return std::make_unique<TransformerActor>(cfg, seed);
    return std::make_unique<MlpActor>(cfg, seed);
}

std::unique_ptr<CriticNet> make_critic(PolicyArch arch, const NetConfig& cfg, uint64_t seed) {
    if (arch == PolicyArch::transformer) return std::make_unique<TransformerCritic>(cfg, seed);
    return std::make_unique<MlpCritic>(cfg, seed);
}

namespace {

// Masked log-probability table for one user's channel choice. Must mirror the
// tape path bit for bit: add the additive mask, then the shared kernel.
void masked_channel_logprobs(const Tensor& channel_logits, int u,
                             const std::vector<uint8_t>& allowed, std::vector<double>& scratch,
                             std::vector<double>& out) {
    int n = channel_logits.cols();
    for (int j = 0; j < n; ++j)
        scratch[j] = channel_logits.at(u, j) + (allowed[j] ? 0.0 : kMaskLogit);
    detail::log_softmax_row({scratch.data(), static_cast<size_t>(n)},
                            {out.data(), static_cast<size_t>(n)});
}

double row_entropy(const std::vector<double>& logprobs) {
    double h = 0.0;
    for (double lp : logprobs) h -= std::exp(lp) * lp;
    return h;
}

int sample_from_logprobs(const std::vector<double>& logprobs, Rng& rng) {
    double u = uniform01(rng);
    double cum = 0.0;
    int last_positive = 0;
    for (size_t j = 0; j < logprobs.size(); ++j) {
        double p = std::exp(logprobs[j]);
        if (p > 0.0) last_positive = static_cast<int>(j);
        cum += p;
        if (u < cum) return static_cast<int>(j);
    }
    return last_positive;
}

int argmax_index(const std::vector<double>& v) {
    int best = 0;
    for (size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[best]) best = static_cast<int>(j);
    return best;
}

}  // namespace

SampledAction sample_masked_action(const Tensor& channel_logits, const Tensor& power_logits,
                                   const EnvConfig& cfg, Rng& rng) {
    int users = cfg.users;
    int n_ch = cfg.channel_actions();
    int n_pw = cfg.power_actions();

    // Full power table up front so the arithmetic matches evaluate_action.
    Tensor pw_ls = Tensor::zeros({users, n_pw});
    for (int u = 0; u < users; ++u)
        detail::log_softmax_row(
            {power_logits.data.data() + static_cast<size_t>(u) * n_pw, static_cast<size_t>(n_pw)},
            {pw_ls.data.data() + static_cast<size_t>(u) * n_pw, static_cast<size_t>(n_pw)});

    SampledAction result;
    result.action.subcarrier.assign(users, -1);
    result.action.power_idx.assign(users, 0);
    result.entropy_per_user.assign(users, 0.0);

    std::vector<double> ch_lp(users), pw_lp(users), ind(users, 0.0);
    std::vector<double> scratch(n_ch), ls(n_ch), pw_row(n_pw);
    for (int u = 0; u < users; ++u) {
        std::vector<int> earlier(result.action.subcarrier.begin(), result.action.subcarrier.begin() + u);
        std::vector<uint8_t> allowed = feasibility_mask(earlier, cfg);
        masked_channel_logprobs(channel_logits, u, allowed, scratch, ls);
        int choice = sample_from_logprobs(ls, rng);
        ch_lp[u] = ls[choice];
        result.entropy_per_user[u] = row_entropy(ls);
        for (int j = 0; j < n_pw; ++j) pw_row[j] = pw_ls.at(u, j);
        if (choice > 0) {
            result.action.subcarrier[u] = choice - 1;
            int p = sample_from_logprobs(pw_row, rng);
            result.action.power_idx[u] = p;
            ind[u] = 1.0;
            result.entropy_per_user[u] += row_entropy(pw_row);
        }
        pw_lp[u] = pw_ls.at(u, result.action.power_idx[u]);
    }

    // Canonical summation order shared with evaluate_action: all channel
    // terms first, then the indicator-weighted power terms.
    double ch_sum = 0.0;
    for (int u = 0; u < users; ++u) ch_sum += ch_lp[u];
    double pw_sum = 0.0;
    for (int u = 0; u < users; ++u) pw_sum += ind[u] * pw_lp[u];
    result.logp = ch_sum + pw_sum;
    return result;
}

JointAction greedy_masked_action(const Tensor& channel_logits, const Tensor& power_logits,
                                 const EnvConfig& cfg) {
    int users = cfg.users;
    int n_ch = cfg.channel_actions();
    int n_pw = cfg.power_actions();
    JointAction action = JointAction::all_idle(users);
    std::vector<double> scratch(n_ch), ls(n_ch), pw_row(n_pw);
    for (int u = 0; u < users; ++u) {
        std::vector<int> earlier(action.subcarrier.begin(), action.subcarrier.begin() + u);
        std::vector<uint8_t> allowed = feasibility_mask(earlier, cfg);
        masked_channel_logprobs(channel_logits, u, allowed, scratch, ls);
        int choice = argmax_index(ls);
        if (choice > 0) {
            action.subcarrier[u] = choice - 1;
            for (int j = 0; j < n_pw; ++j) pw_row[j] = power_logits.at(u, j);
            action.power_idx[u] = argmax_index(pw_row);
        }
    }
    return action;
}

ActionEval evaluate_action(Tape& tape, const ActorOutput& out, const JointAction& action,
                           const EnvConfig& cfg) {
    int users = cfg.users;
    int n_ch = cfg.channel_actions();
    if (static_cast<int>(action.subcarrier.size()) != users)
        throw ContractError("action does not cover every user");

    Tensor mask = Tensor::zeros({users, n_ch});
    std::vector<int> chosen_ch(users), chosen_pw(users);
    Tensor ind = Tensor::zeros({users, 1});
    for (int u = 0; u < users; ++u) {
        std::vector<int> earlier(action.subcarrier.begin(), action.subcarrier.begin() + u);
        std::vector<uint8_t> allowed = feasibility_mask(earlier, cfg);
        for (int j = 0; j < n_ch; ++j)
            if (!allowed[j]) mask.at(u, j) = kMaskLogit;
        int sc = action.subcarrier[u];
        chosen_ch[u] = sc == -1 ? 0 : 1 + sc;
        if (chosen_ch[u] < 0 || chosen_ch[u] >= n_ch || !allowed[chosen_ch[u]])
            throw ContractError("action for user " + std::to_string(u) +
                                " is infeasible under the sequential masks");
        chosen_pw[u] = action.power_idx[u];
        if (chosen_pw[u] < 0 || chosen_pw[u] >= cfg.power_actions())
            throw ContractError("action for user " + std::to_string(u) + " has invalid power index");
        if (sc != -1) ind.data[u] = 1.0;
    }

    Value ch_ls = tape.log_softmax_rows(tape.add(out.channel_logits, tape.input(mask)));
    Value ch_terms = tape.gather_rows(ch_ls, chosen_ch);
    Value ch_sum = tape.sum(ch_terms);

    Value pw_ls = tape.log_softmax_rows(out.power_logits);
    Value pw_terms = tape.gather_rows(pw_ls, chosen_pw);
    Value ind_v = tape.input(ind);
    Value pw_masked = tape.mul(ind_v, pw_terms);
    Value pw_sum = tape.sum(pw_masked);

    ActionEval eval;
    eval.logp = tape.add(ch_sum, pw_sum);

    // Entropy of the realized sequential distributions: channel entropy for
    // everyone, power entropy only where a transmission happens.
    Value ch_h = tape.scale(tape.row_sum(tape.mul(tape.exp(ch_ls), ch_ls)), -1.0);
    Value pw_h = tape.scale(tape.row_sum(tape.mul(tape.exp(pw_ls), pw_ls)), -1.0);
    Value pw_h_masked = tape.mul(ind_v, pw_h);
    eval.entropy = tape.add(tape.sum(ch_h), tape.sum(pw_h_masked));

    eval.logp_per_user.resize(users);
    eval.entropy_per_user.resize(users);
    const Tensor& cht = tape.val(ch_terms);
    const Tensor& pwm = tape.val(pw_masked);
    const Tensor& chh = tape.val(ch_h);
    const Tensor& pwh = tape.val(pw_h_masked);
    for (int u = 0; u < users; ++u) {
        eval.logp_per_user[u] = cht.data[u] + pwm.data[u];
        eval.entropy_per_user[u] = chh.data[u] + pwh.data[u];
    }
    return eval;
}

}  // namespace aoisim
