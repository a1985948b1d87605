#include <cmath>

#include "aoisim/harness.hpp"
#include "aoisim/nets.hpp"
#include "doctest.h"

using namespace aoisim;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = 2.0 * uniform01(rng) - 1.0;
    return t;
}

NetConfig tiny_net(const EnvConfig& env, int d_model = 8, int heads = 1, int layers = 1) {
    return NetConfig::for_env(env, d_model, heads, layers, 4 * d_model);
}

}  // namespace

TEST_CASE("feature embedding") {
    Rng rng(1);
    LinearParams proj("embed", 5, 8, rng);
    Parameter pos("pos", Tensor::zeros({4, 8}));

    // zero input with a zeroed positional table stays zero (biases start at 0)
    Tape tape(false);
    Value e = embed_features(tape, tape.input(Tensor::zeros({3, 5})), proj, pos);
    CHECK(tape.val(e).shape == std::vector<int>{3, 8});
    for (double v : tape.val(e).data) CHECK(v == 0.0);

    // a live positional table breaks user-permutation symmetry
    for (double& v : pos.value.data) v = gaussian(rng);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor swapped = x;
    for (int j = 0; j < 5; ++j) std::swap(swapped.at(0, j), swapped.at(1, j));
    Tape t2(false);
    Tensor a = t2.val(embed_features(t2, t2.input(x), proj, pos));
    Tensor b = t2.val(embed_features(t2, t2.input(swapped), proj, pos));
    bool row0_differs = false;
    for (int j = 0; j < 8; ++j)
        if (a.at(1, j) != b.at(0, j)) row0_differs = true;
    CHECK(row0_differs);

    // more users than the table covers is a configuration error
    CHECK_THROWS_AS(embed_features(t2, t2.input(Tensor::zeros({5, 5})), proj, pos), ConfigError);
}

TEST_CASE("qkv projections") {
    Rng rng(2);
    Parameter wq("wq", Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    Parameter wk("wk", random_tensor({3, 3}, rng));
    Parameter wv("wv", random_tensor({3, 3}, rng));
    Tensor x = random_tensor({4, 3}, rng);

    Tape tape(false);
    auto [q, k, v] = project_qkv(tape, tape.input(x), wq, wk, wv);
    CHECK(tape.val(q).data == x.data);  // identity projection

    Tape t2(false);
    auto [zq, zk, zv] = project_qkv(t2, t2.input(Tensor::zeros({4, 3})), wq, wk, wv);
    for (double d : t2.val(zq).data) CHECK(d == 0.0);
    for (double d : t2.val(zk).data) CHECK(d == 0.0);
    for (double d : t2.val(zv).data) CHECK(d == 0.0);

    auto eval = [&](bool with_grad) {
        Tape t(with_grad);
        auto [qq, kk, vv] = project_qkv(t, t.input(x), wq, wk, wv);
        (void)kk;
        (void)vv;
        Value loss = t.sum(qq);
        double out = t.val(loss).item();
        if (with_grad) t.backward(loss);
        return out;
    };
    CHECK(finite_diff_check(eval, {&wq}, 1e-5) < 1e-4);
}

TEST_CASE("attention scores") {
    Tape tape(false);

    // single user attends to itself with weight exactly 1
    Value solo = attention_scores(tape, tape.input(Tensor::row({0.3, -2.0})),
                                  tape.input(Tensor::row({1.0, 0.5})), 2);
    CHECK(tape.val(solo).data == std::vector<double>{1.0});

    // zero queries give uniform rows
    Value uniform = attention_scores(tape, tape.input(Tensor::zeros({3, 4})),
                                     tape.input(random_tensor({3, 4}, *[] {
                                         static Rng r(5);
                                         return &r;
                                     }())),
                                     4);
    for (double v : tape.val(uniform).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // score offset of ln 3 produces the 1:3 split
    double s = 0.4;
    Value two = attention_scores(tape, tape.input(Tensor::matrix(2, 1, {1.0, 1.0})),
                                 tape.input(Tensor::matrix(2, 1, {s, s + std::log(3.0)})), 1);
    CHECK(tape.val(two).at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(tape.val(two).at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("attention mix") {
    Rng rng(6);
    Tape tape(false);
    Tensor v = random_tensor({3, 4}, rng);

    Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Value z = attention_mix(tape, tape.input(eye), tape.input(v));
    CHECK(tape.val(z).data == v.data);

    Tensor uni = Tensor::full({3, 3}, 1.0 / 3);
    Value mean = attention_mix(tape, tape.input(uni), tape.input(v));
    for (int j = 0; j < 4; ++j) {
        double m = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
        for (int i = 0; i < 3; ++i) CHECK(tape.val(mean).at(i, j) == doctest::Approx(m).epsilon(1e-12));
    }

    // identical to the plain matrix product
    Tensor alpha = Tensor::matrix(3, 3, {0.2, 0.3, 0.5, 0.1, 0.8, 0.1, 0.25, 0.25, 0.5});
    Value mixed = attention_mix(tape, tape.input(alpha), tape.input(v));
    Value prod = tape.matmul(tape.input(alpha), tape.input(v));
    CHECK(tape.val(mixed).data == tape.val(prod).data);
}

TEST_CASE("encoder layer shapes and gradients") {
    EnvConfig env = make_toy_env(3, 2, 10, 2);
    NetConfig cfg = tiny_net(env);
    Rng rng(7);
    EncoderLayer layer("layer0", cfg, rng);
    Tensor x = random_tensor({3, 8}, rng);

    Tape tape(false);
    std::vector<Tensor> attn;
    Value out = layer.forward(tape, tape.input(x), &attn);
    CHECK(tape.val(out).shape == std::vector<int>{3, 8});
    REQUIRE(attn.size() == 1);
    CHECK(attn[0].shape == std::vector<int>{3, 3});

    Tensor mix = random_tensor({3, 8}, rng);
    std::vector<Parameter*> params;
    layer.collect(params);
    auto eval = [&](bool with_grad) {
        Tape t(with_grad);
        Value o = layer.forward(t, t.input(x), nullptr);
        Value loss = t.sum(t.mul(o, t.input(mix)));
        double v = t.val(loss).item();
        if (with_grad) t.backward(loss);
        return v;
    };
    CHECK(finite_diff_check(eval, params, 1e-5) < 1e-4);
}

TEST_CASE("actor forward contract at table scale") {
    EnvConfig env;
    env.users = 20;
    env.profiles = build_profiles(20);
    NetConfig cfg = NetConfig::for_env(env, 32, 4, 2, 64);
    TransformerActor actor(cfg, 11);

    EnvState s = env_reset(env, 3);
    Tape tape(false);
    ActorOutput out = actor.forward(tape, state_features(s, env));
    CHECK(tape.val(out.channel_logits).shape == std::vector<int>{20, 9});
    CHECK(tape.val(out.power_logits).shape == std::vector<int>{20, 4});
    REQUIRE(out.attention.size() == 2);
    REQUIRE(out.attention[0].size() == 4);
    for (const auto& layer : out.attention)
        for (const Tensor& head : layer) {
            CHECK(head.shape == std::vector<int>{20, 20});
            for (int i = 0; i < 20; ++i) {
                double sum = 0.0;
                for (int j = 0; j < 20; ++j) {
                    sum += head.at(i, j);
                    CHECK(head.at(i, j) >= 0.0);
                }
                CHECK(std::abs(sum - 1.0) < 1e-9);
            }
        }
}

TEST_CASE("permutation equivariance with a zeroed positional table") {
    EnvConfig env = make_toy_env(5, 2, 10, 2);
    NetConfig cfg = tiny_net(env, 8, 2, 2);
    TransformerActor actor(cfg, 13);
    for (double& v : actor.positional_table().value.data) v = 0.0;

    Rng rng(17);
    Tensor x = random_tensor({5, env.feature_dim()}, rng);
    std::vector<int> perm = {3, 0, 4, 1, 2};
    Tensor px = Tensor::zeros({5, env.feature_dim()});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < env.feature_dim(); ++j) px.at(i, j) = x.at(perm[i], j);

    Tape t1(false), t2(false);
    ActorOutput a = actor.forward(t1, x);
    ActorOutput b = actor.forward(t2, px);
    const Tensor& la = t1.val(a.channel_logits);
    const Tensor& lb = t2.val(b.channel_logits);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < la.cols(); ++j)
            CHECK(std::abs(lb.at(i, j) - la.at(perm[i], j)) < 1e-9);

    // identical rows produce identical logits
    Tensor twin = x;
    for (int j = 0; j < env.feature_dim(); ++j) twin.at(1, j) = twin.at(0, j);
    Tape t3(false);
    ActorOutput c = actor.forward(t3, twin);
    const Tensor& lc = t3.val(c.channel_logits);
    for (int j = 0; j < lc.cols(); ++j) CHECK(lc.at(0, j) == lc.at(1, j));
}

TEST_CASE("critic forward") {
    EnvConfig env = make_toy_env(4, 2, 10, 2);
    NetConfig cfg = tiny_net(env);
    TransformerCritic critic(cfg, 19);
    EnvState s = env_reset(env, 2);
    Tensor f = state_features(s, env);

    Tape t1(false), t2(false);
    double v1 = t1.val(critic.forward(t1, f)).item();
    double v2 = t2.val(critic.forward(t2, f)).item();
    CHECK(v1 == v2);
    CHECK(t1.val(critic.forward(t1, f)).shape == std::vector<int>{1, 1});

    std::vector<Parameter*> params = critic.params();
    auto eval = [&](bool with_grad) {
        Tape t(with_grad);
        Value loss = critic.forward(t, f);
        double v = t.val(loss).item();
        if (with_grad) t.backward(loss);
        return v;
    };
    CHECK(finite_diff_check(eval, params, 1e-5) < 1e-4);
}

TEST_CASE("mlp ablation keeps users independent") {
    EnvConfig env = make_toy_env(4, 2, 10, 2);
    NetConfig cfg = tiny_net(env, 16, 2, 2);
    MlpActor actor(cfg, 23);

    Rng rng(29);
    Tensor x = random_tensor({4, env.feature_dim()}, rng);
    Tensor y = x;
    for (int j = 0; j < env.feature_dim(); ++j) y.at(2, j) += 0.5;  // perturb user 2 only

    Tape t1(false), t2(false);
    ActorOutput a = actor.forward(t1, x);
    ActorOutput b = actor.forward(t2, y);
    CHECK(a.attention.empty());
    CHECK(t1.val(a.channel_logits).shape == std::vector<int>{4, 3});
    CHECK(t1.val(a.power_logits).shape == std::vector<int>{4, 2});
    const Tensor& la = t1.val(a.channel_logits);
    const Tensor& lb = t2.val(b.channel_logits);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            if (i == 2) continue;
            CHECK(la.at(i, j) == lb.at(i, j));
        }
    bool changed = false;
    for (int j = 0; j < 3; ++j)
        if (la.at(2, j) != lb.at(2, j)) changed = true;
    CHECK(changed);

    std::vector<Parameter*> params = actor.params();
    auto eval = [&](bool with_grad) {
        Tape t(with_grad);
        ActorOutput o = actor.forward(t, x);
        Value loss = t.add(t.sum(o.channel_logits), t.sum(o.power_logits));
        double v = t.val(loss).item();
        if (with_grad) t.backward(loss);
        return v;
    };
    CHECK(finite_diff_check(eval, params, 1e-5) < 1e-4);
}

TEST_CASE("masked sampling distribution and determinism") {
    EnvConfig env = make_toy_env(1, 2, 10, 2);
    Tensor ch = Tensor::zeros({1, 3});
    Tensor pw = Tensor::zeros({1, 2});

    // equal logits: idle and both subcarriers each get 1/3
    Rng rng(31);
    int counts[3] = {0, 0, 0};
    const int draws = 30000;
    for (int i = 0; i < draws; ++i) {
        SampledAction a = sample_masked_action(ch, pw, env, rng);
        counts[a.action.subcarrier[0] + 1] += 1;
    }
    for (int k = 0; k < 3; ++k)
        CHECK(std::abs(static_cast<double>(counts[k]) / draws - 1.0 / 3) < 0.02);

    Rng r1(77), r2(77);
    SampledAction s1 = sample_masked_action(ch, pw, env, r1);
    SampledAction s2 = sample_masked_action(ch, pw, env, r2);
    CHECK(s1.action.subcarrier == s2.action.subcarrier);
    CHECK(s1.action.power_idx == s2.action.power_idx);
    CHECK(s1.logp == s2.logp);
}

TEST_CASE("a full subcarrier gets exactly zero probability") {
    EnvConfig env = make_toy_env(3, 1, 10, 2);
    // users 0 and 1 overwhelmingly prefer the only subcarrier
    Tensor ch = Tensor::zeros({3, 2});
    ch.at(0, 1) = 50.0;
    ch.at(1, 1) = 50.0;
    ch.at(2, 1) = 50.0;
    Tensor pw = Tensor::zeros({3, 2});
    Rng rng(37);
    for (int i = 0; i < 2000; ++i) {
        SampledAction a = sample_masked_action(ch, pw, env, rng);
        CHECK(a.action.subcarrier[0] == 0);
        CHECK(a.action.subcarrier[1] == 0);
        CHECK(a.action.subcarrier[2] == -1);  // masked to zero probability
    }
}

TEST_CASE("feasibility holds across sampled actions") {
    EnvConfig env = make_toy_env(6, 3, 25, 2);
    NetConfig cfg = tiny_net(env, 16, 2, 1);
    TransformerActor actor(cfg, 41);
    Rng rng(43);
    EnvState s = env_reset(env, 4);
    long violations = 0;
    for (int step = 0; step < 20000; ++step) {
        Tape tape(false);
        ActorOutput out = actor.forward(tape, state_features(s, env));
        SampledAction a = sample_masked_action(tape.val(out.channel_logits),
                                               tape.val(out.power_logits), env, rng);
        try {
            to_assignment(a.action, env).validate(env.radio);
        } catch (const ContractError&) {
            violations += 1;
        }
        StepResult r = env_step(s, a.action, env, rng);
        s = r.terminal ? env_reset(env, rng()) : std::move(r.next);
    }
    CHECK(violations == 0);
}

TEST_CASE("evaluate_action reproduces the sampler exactly") {
    EnvConfig env = make_toy_env(5, 2, 30, 3);
    NetConfig cfg = tiny_net(env, 8, 2, 1);
    TransformerActor actor(cfg, 47);
    Rng rng(53);
    EnvState s = env_reset(env, 6);
    for (int trial = 0; trial < 300; ++trial) {
        Tape tape(true);
        ActorOutput out = actor.forward(tape, state_features(s, env));
        SampledAction sampled = sample_masked_action(tape.val(out.channel_logits),
                                                     tape.val(out.power_logits), env, rng);
        ActionEval eval = evaluate_action(tape, out, sampled.action, env);
        CHECK(tape.val(eval.logp).item() - sampled.logp == 0.0);
        StepResult r = env_step(s, sampled.action, env, rng);
        s = r.terminal ? env_reset(env, rng()) : std::move(r.next);
    }
}

TEST_CASE("evaluate_action entropy and log-probability identities") {
    EnvConfig env = make_toy_env(3, 2, 10, 2);
    // equal channel logits: uniform over {idle, sc1, sc2}
    Tape tape(false);
    ActorOutput out;
    out.channel_logits = tape.input(Tensor::zeros({3, 3}));
    out.power_logits = tape.input(Tensor::zeros({3, 2}));

    JointAction idle = JointAction::all_idle(3);
    ActionEval eval = evaluate_action(tape, out, idle, env);
    // all-idle log-probability is the sum of per-user idle log-probs
    CHECK(tape.val(eval.logp).item() == doctest::Approx(3.0 * std::log(1.0 / 3)).epsilon(1e-12));
    // channel entropy of each uniform row is ln 3; idle users add no power term
    for (int u = 0; u < 3; ++u)
        CHECK(eval.entropy_per_user[u] == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // an action that breaks the two-user cap is rejected
    JointAction bad = idle;
    bad.subcarrier = {0, 0, 0};
    CHECK_THROWS_AS(evaluate_action(tape, out, bad, env), ContractError);
}
