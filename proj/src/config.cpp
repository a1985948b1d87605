#include "aoisim/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace aoisim {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::string& path,
                         std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config key: " + path + it.key());
    }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for " + path + key + ": " + e.what());
    }
}

// The environment override table mirrors every scalar/array config key.
struct EnvOverride {
    const char* var;
    const char* section;  // nullptr for top level
    const char* key;
};

constexpr EnvOverride kEnvOverrides[] = {
    {"AOISIM_SEED", nullptr, "seed"},
    {"AOISIM_OUT_DIR", nullptr, "out_dir"},
    {"AOISIM_ATTENTION_SNAPSHOTS", nullptr, "attention_snapshots"},
    {"AOISIM_ENV_USERS", "env", "users"},
    {"AOISIM_ENV_HORIZON", "env", "horizon"},
    {"AOISIM_ENV_A_MAX", "env", "a_max"},
    {"AOISIM_ENV_LAMBDA", "env", "lambda"},
    {"AOISIM_ENV_MAX_TASKS", "env", "max_tasks"},
    {"AOISIM_RADIO_SUBCARRIERS", "radio", "subcarriers"},
    {"AOISIM_RADIO_TOTAL_BANDWIDTH_HZ", "radio", "total_bandwidth_hz"},
    {"AOISIM_RADIO_FADING_MEAN", "radio", "fading_mean"},
    {"AOISIM_RADIO_NOISE_W", "radio", "noise_w"},
    {"AOISIM_RADIO_P_MAX_W", "radio", "p_max_w"},
    {"AOISIM_RADIO_POWER_LEVELS_W", "radio", "power_levels_w"},
    {"AOISIM_NET_POLICY", "net", "policy"},
    {"AOISIM_NET_D_MODEL", "net", "d_model"},
    {"AOISIM_NET_HEADS", "net", "heads"},
    {"AOISIM_NET_LAYERS", "net", "layers"},
    {"AOISIM_NET_D_FF", "net", "d_ff"},
    {"AOISIM_PPO_GAMMA", "ppo", "gamma"},
    {"AOISIM_PPO_GAE_LAMBDA", "ppo", "gae_lambda"},
    {"AOISIM_PPO_CLIP_EPS", "ppo", "clip_eps"},
    {"AOISIM_PPO_C1", "ppo", "c1"},
    {"AOISIM_PPO_C2", "ppo", "c2"},
    {"AOISIM_PPO_EPOCHS", "ppo", "epochs"},
    {"AOISIM_PPO_BATCH", "ppo", "batch"},
    {"AOISIM_PPO_BUFFER", "ppo", "buffer"},
    {"AOISIM_PPO_LR", "ppo", "lr"},
    {"AOISIM_PPO_EPISODES", "ppo", "episodes"},
    {"AOISIM_PPO_VALUE_TARGET", "ppo", "value_target"},
    {"AOISIM_PPO_GRAD_CLIP", "ppo", "grad_clip"},
    {"AOISIM_PPO_GRAD_SHARDS", "ppo", "grad_shards"},
};

void apply_env_overrides_to(json& j) {
    for (const EnvOverride& o : kEnvOverrides) {
        const char* raw = std::getenv(o.var);
        if (raw == nullptr) continue;
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = std::string(raw);  // bare strings need no quoting
        }
        if (o.section == nullptr) {
            j[o.key] = value;
        } else {
            j[o.section][o.key] = value;
        }
    }
}

}  // namespace

std::vector<UserProfile> ExperimentConfig::resolved_profiles() const {
    if (!explicit_profiles.empty()) {
        std::vector<UserProfile> p = explicit_profiles;
        for (int u = 0; u < static_cast<int>(p.size()); ++u) p[u].user = u;
        return p;
    }
    std::vector<UserProfile> p = build_profiles(users);
    for (UserProfile& prof : p) prof.max_tasks = max_tasks;
    return p;
}

EnvConfig ExperimentConfig::env_config() const {
    EnvConfig env;
    env.users = users;
    env.radio = radio;
    env.a_max = a_max;
    env.lambda = lambda;
    env.horizon = horizon;
    env.profiles = resolved_profiles();
    return env;
}

NetConfig ExperimentConfig::net_config() const {
    return NetConfig::for_env(env_config(), d_model, n_heads, n_layers, resolved_d_ff());
}

PolicyArch ExperimentConfig::arch() const {
    if (policy == "transformer") return PolicyArch::transformer;
    if (policy == "mlp") return PolicyArch::mlp;
    throw ConfigError("net.policy must be 'transformer' or 'mlp', got '" + policy + "'");
}

void ExperimentConfig::validate() const {
    if (users < 1) throw ConfigError("env.users must be >= 1");
    if (!explicit_profiles.empty() && static_cast<int>(explicit_profiles.size()) != users)
        throw ConfigError("env.profiles must list exactly env.users entries");
    if (lambda < 0.0) throw ConfigError("env.lambda must be >= 0");
    if (a_max < 1) throw ConfigError("env.a_max must be >= 1");
    if (max_tasks < 1) throw ConfigError("env.max_tasks must be >= 1");
    for (double f : attention_snapshots)
        if (f < 0.0 || f > 1.0) throw ConfigError("attention_snapshots entries must lie in [0,1]");
    env_config().validate();
    net_config().validate();
    (void)arch();
    ppo.validate();
    if (ppo.buffer < horizon) throw ConfigError("ppo.buffer must be >= env.horizon");
}

ExperimentConfig parse_config(const std::string& text, bool apply_env) {
    std::string trimmed = text;
    size_t a = trimmed.find_first_not_of(" \t\r\n");
    std::string body = a == std::string::npos ? "{}" : trimmed;

    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be an object");
    if (apply_env) apply_env_overrides_to(j);

    reject_unknown_keys(j, "", {"seed", "out_dir", "attention_snapshots", "env", "radio", "net", "ppo"});

    ExperimentConfig cfg;
    read_field(j, "", "seed", cfg.seed);
    read_field(j, "", "out_dir", cfg.out_dir);
    read_field(j, "", "attention_snapshots", cfg.attention_snapshots);

    if (j.contains("env")) {
        const json& e = j.at("env");
        reject_unknown_keys(e, "env.", {"users", "horizon", "a_max", "lambda", "max_tasks", "profiles"});
        read_field(e, "env.", "users", cfg.users);
        read_field(e, "env.", "horizon", cfg.horizon);
        read_field(e, "env.", "a_max", cfg.a_max);
        read_field(e, "env.", "lambda", cfg.lambda);
        read_field(e, "env.", "max_tasks", cfg.max_tasks);
        if (e.contains("profiles")) {
            if (!e.at("profiles").is_array()) throw ConfigError("env.profiles must be an array");
            int u = 0;
            for (const json& pj : e.at("profiles")) {
                std::string path = "env.profiles[" + std::to_string(u) + "].";
                reject_unknown_keys(pj, path, {"aoi_threshold", "task_bits", "weight", "max_tasks"});
                UserProfile p;
                p.user = u;
                p.max_tasks = cfg.max_tasks;
                read_field(pj, path, "aoi_threshold", p.aoi_threshold);
                read_field(pj, path, "task_bits", p.task_bits);
                read_field(pj, path, "weight", p.weight);
                read_field(pj, path, "max_tasks", p.max_tasks);
                cfg.explicit_profiles.push_back(p);
                ++u;
            }
        }
    }

    if (j.contains("radio")) {
        const json& r = j.at("radio");
        reject_unknown_keys(r, "radio.", {"subcarriers", "total_bandwidth_hz", "fading_mean",
                                          "noise_w", "p_max_w", "power_levels_w"});
        read_field(r, "radio.", "subcarriers", cfg.radio.subcarriers);
        read_field(r, "radio.", "total_bandwidth_hz", cfg.radio.total_bandwidth_hz);
        read_field(r, "radio.", "fading_mean", cfg.radio.fading_mean);
        read_field(r, "radio.", "noise_w", cfg.radio.noise_w);
        read_field(r, "radio.", "p_max_w", cfg.radio.p_max_w);
        read_field(r, "radio.", "power_levels_w", cfg.radio.power_levels_w);
    }

    if (j.contains("net")) {
        const json& n = j.at("net");
        reject_unknown_keys(n, "net.", {"policy", "d_model", "heads", "layers", "d_ff"});
        read_field(n, "net.", "policy", cfg.policy);
        read_field(n, "net.", "d_model", cfg.d_model);
        read_field(n, "net.", "heads", cfg.n_heads);
        read_field(n, "net.", "layers", cfg.n_layers);
        read_field(n, "net.", "d_ff", cfg.d_ff);
    }

    if (j.contains("ppo")) {
        const json& p = j.at("ppo");
        reject_unknown_keys(p, "ppo.", {"gamma", "gae_lambda", "clip_eps", "c1", "c2", "epochs",
                                        "batch", "buffer", "lr", "episodes", "value_target",
                                        "grad_clip", "grad_shards"});
        read_field(p, "ppo.", "gamma", cfg.ppo.gamma);
        read_field(p, "ppo.", "gae_lambda", cfg.ppo.gae_lambda);
        read_field(p, "ppo.", "clip_eps", cfg.ppo.clip_eps);
        read_field(p, "ppo.", "c1", cfg.ppo.c1);
        read_field(p, "ppo.", "c2", cfg.ppo.c2);
        read_field(p, "ppo.", "epochs", cfg.ppo.epochs);
        read_field(p, "ppo.", "batch", cfg.ppo.batch);
        read_field(p, "ppo.", "buffer", cfg.ppo.buffer);
        read_field(p, "ppo.", "lr", cfg.ppo.lr);
        read_field(p, "ppo.", "episodes", cfg.ppo.episodes);
        if (p.contains("value_target")) {
            std::string vt = p.at("value_target").get<std::string>();
            if (vt == "gae") {
                cfg.ppo.one_step_value_target = false;
            } else if (vt == "one_step") {
                cfg.ppo.one_step_value_target = true;
            } else {
                throw ConfigError("ppo.value_target must be 'gae' or 'one_step', got '" + vt + "'");
            }
        }
        read_field(p, "ppo.", "grad_clip", cfg.ppo.grad_clip);
        read_field(p, "ppo.", "grad_shards", cfg.ppo.grad_shards);
    }

    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path, bool apply_env) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str(), apply_env);
}

std::string save_config(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["attention_snapshots"] = cfg.attention_snapshots;
    j["env"]["users"] = cfg.users;
    j["env"]["horizon"] = cfg.horizon;
    j["env"]["a_max"] = cfg.a_max;
    j["env"]["lambda"] = cfg.lambda;
    j["env"]["max_tasks"] = cfg.max_tasks;
    json profiles = json::array();
    for (const UserProfile& p : cfg.resolved_profiles()) {
        profiles.push_back({{"aoi_threshold", p.aoi_threshold},
                            {"task_bits", p.task_bits},
                            {"weight", p.weight},
                            {"max_tasks", p.max_tasks}});
    }
    j["env"]["profiles"] = profiles;
    j["radio"]["subcarriers"] = cfg.radio.subcarriers;
    j["radio"]["total_bandwidth_hz"] = cfg.radio.total_bandwidth_hz;
    j["radio"]["fading_mean"] = cfg.radio.fading_mean;
    j["radio"]["noise_w"] = cfg.radio.noise_w;
    j["radio"]["p_max_w"] = cfg.radio.p_max_w;
    j["radio"]["power_levels_w"] = cfg.radio.power_levels_w;
    j["net"]["policy"] = cfg.policy;
    j["net"]["d_model"] = cfg.d_model;
    j["net"]["heads"] = cfg.n_heads;
    j["net"]["layers"] = cfg.n_layers;
    j["net"]["d_ff"] = cfg.resolved_d_ff();
    j["ppo"]["gamma"] = cfg.ppo.gamma;
    j["ppo"]["gae_lambda"] = cfg.ppo.gae_lambda;
    j["ppo"]["clip_eps"] = cfg.ppo.clip_eps;
    j["ppo"]["c1"] = cfg.ppo.c1;
    j["ppo"]["c2"] = cfg.ppo.c2;
    j["ppo"]["epochs"] = cfg.ppo.epochs;
    j["ppo"]["batch"] = cfg.ppo.batch;
    j["ppo"]["buffer"] = cfg.ppo.buffer;
    j["ppo"]["lr"] = cfg.ppo.lr;
    j["ppo"]["episodes"] = cfg.ppo.episodes;
    j["ppo"]["value_target"] = cfg.ppo.one_step_value_target ? "one_step" : "gae";
    j["ppo"]["grad_clip"] = cfg.ppo.grad_clip;
    j["ppo"]["grad_shards"] = cfg.ppo.grad_shards;
    return j.dump(2) + "\n";
}

}  // namespace aoisim
