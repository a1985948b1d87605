#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aoisim/env.hpp"
#include "aoisim/tensor.hpp"

namespace aoisim {

// Additive logit applied to masked-out actions before any softmax.
inline constexpr double kMaskLogit = -1e9;

struct NetConfig {
    int d_in = 0;
    int d_model = 256;
    int n_heads = 8;
    int n_layers = 3;
    int d_ff = 1024;
    int n_channel_actions = 0;  // idle + subcarriers
    int n_power_actions = 0;
    int max_users = 0;  // sizes the positional table

    static NetConfig for_env(const EnvConfig& env, int d_model, int n_heads, int n_layers, int d_ff);
    void validate() const;
};

struct ActorOutput {
    Value channel_logits;  // [U, N+1], column 0 = idle
    Value power_logits;    // [U, P]
    // attention[layer][head] is the row-stochastic U x U matrix of that pass;
    // empty for architectures without attention.
    std::vector<std::vector<Tensor>> attention;
};

class ActorNet {
  public:
    virtual ~ActorNet() = default;
    virtual ActorOutput forward(Tape& tape, const Tensor& features) = 0;
    virtual std::vector<Parameter*> params() = 0;
};

class CriticNet {
  public:
    virtual ~CriticNet() = default;
    virtual Value forward(Tape& tape, const Tensor& features) = 0;  // [1,1]
    virtual std::vector<Parameter*> params() = 0;
};

// Linear layer, x [m,in] -> [m,out], weights Xavier-initialized.
struct LinearParams {
    Parameter w;  // [in, out]
    Parameter b;  // [1, out]

    LinearParams(const std::string& name, int in, int out, Rng& rng);
    Value apply(Tape& tape, Value x);
    void collect(std::vector<Parameter*>& out);
};

// linear -> ReLU -> linear, hidden width d_model.
struct HeadParams {
    LinearParams l1;
    LinearParams l2;

    HeadParams(const std::string& name, int d_model, int n_out, Rng& rng);
    Value apply(Tape& tape, Value x);
    void collect(std::vector<Parameter*>& out);
};

// Attention building blocks, exposed for direct testing. `alpha` rows are
// stochastic; scores scale by 1/sqrt(d_model) independent of head width.
Value embed_features(Tape& tape, Value x, LinearParams& proj, Parameter& pos_table);
std::array<Value, 3> project_qkv(Tape& tape, Value x, Parameter& wq, Parameter& wk, Parameter& wv);
Value attention_scores(Tape& tape, Value q, Value k, int d_model);
Value attention_mix(Tape& tape, Value alpha, Value v);

// Post-norm encoder layer: multi-head self-attention with residual and layer
// norm, then a position-wise feedforward with residual and layer norm.
struct EncoderLayer {
    Parameter wq, wk, wv;  // bias-free projections
    LinearParams out_proj;
    Parameter ln1_gain, ln1_bias;
    LinearParams ff1, ff2;
    Parameter ln2_gain, ln2_bias;
    int d_model;
    int n_heads;

    EncoderLayer(const std::string& name, const NetConfig& cfg, Rng& rng);
    // Appends this pass's per-head attention matrices to *attention_out when given.
    Value forward(Tape& tape, Value x, std::vector<Tensor>* attention_out);
    void collect(std::vector<Parameter*>& out);
};

class TransformerActor : public ActorNet {
  public:
    TransformerActor(const NetConfig& cfg, uint64_t seed, const std::string& name = "actor");
    ActorOutput forward(Tape& tape, const Tensor& features) override;
    std::vector<Parameter*> params() override;

    const NetConfig& config() const { return cfg_; }
    Parameter& positional_table() { return pos_table_; }
    Value encode(Tape& tape, const Tensor& features, std::vector<std::vector<Tensor>>* attention);

  private:
    NetConfig cfg_;
    Rng init_rng_;  // consumed during construction only; members initialize in order
    LinearParams embed_;
    Parameter pos_table_;
    std::vector<EncoderLayer> layers_;
    HeadParams channel_head_;
    HeadParams power_head_;
};

class TransformerCritic : public CriticNet {
  public:
    TransformerCritic(const NetConfig& cfg, uint64_t seed, const std::string& name = "critic");
    Value forward(Tape& tape, const Tensor& features) override;
    std::vector<Parameter*> params() override;

  private:
    NetConfig cfg_;
    Rng init_rng_;
    LinearParams embed_;
    Parameter pos_table_;
    std::vector<EncoderLayer> layers_;
    HeadParams value_head_;
};

// Ablation: the same embedding and head structure but a per-user feedforward
// trunk, so no information flows between users.
class MlpActor : public ActorNet {
  public:
    MlpActor(const NetConfig& cfg, uint64_t seed, const std::string& name = "actor");
    ActorOutput forward(Tape& tape, const Tensor& features) override;
    std::vector<Parameter*> params() override;

  private:
    NetConfig cfg_;
    Rng init_rng_;
    LinearParams embed_;
    std::vector<LinearParams> hidden_;
    HeadParams channel_head_;
    HeadParams power_head_;
};

class MlpCritic : public CriticNet {
  public:
    MlpCritic(const NetConfig& cfg, uint64_t seed, const std::string& name = "critic");
    Value forward(Tape& tape, const Tensor& features) override;
    std::vector<Parameter*> params() override;

  private:
    NetConfig cfg_;
    Rng init_rng_;
    LinearParams embed_;
    std::vector<LinearParams> hidden_;
    HeadParams value_head_;
};

enum class PolicyArch { transformer, mlp };

std::unique_ptr<ActorNet> make_actor(PolicyArch arch, const NetConfig& cfg, uint64_t seed);
std::unique_ptr<CriticNet> make_critic(PolicyArch arch, const NetConfig& cfg, uint64_t seed);

struct SampledAction {
    JointAction action;
    double logp = 0.0;                     // sum of chosen masked log-probabilities
    std::vector<double> entropy_per_user;  // channel entropy + power entropy when transmitting
};

// Users decide in ascending index; each sees its feasibility mask given the
// earlier choices, which enforces the two-users-per-subcarrier cap jointly.
// Idle users draw no power level and contribute no power log-probability.
SampledAction sample_masked_action(const Tensor& channel_logits, const Tensor& power_logits,
                                   const EnvConfig& cfg, Rng& rng);

// Argmax variant under the same sequential masking; ties pick the lower index.
JointAction greedy_masked_action(const Tensor& channel_logits, const Tensor& power_logits,
                                 const EnvConfig& cfg);

struct ActionEval {
    Value logp;     // [1,1], bit-identical to the sampler's stored value
    Value entropy;  // [1,1], summed over users
    std::vector<double> logp_per_user;
    std::vector<double> entropy_per_user;
};

// Rebuilds the masked sequential distributions implied by `action` and scores
// it on the tape; throws ContractError if the action violates the masks.
ActionEval evaluate_action(Tape& tape, const ActorOutput& out, const JointAction& action,
                           const EnvConfig& cfg);

}  // namespace aoisim
