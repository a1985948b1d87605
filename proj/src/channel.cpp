#include "aoisim/channel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace aoisim {

void RadioConfig::validate() const {
    if (subcarriers < 1) throw ConfigError("radio.subcarriers must be >= 1");
    if (total_bandwidth_hz <= 0.0) throw ConfigError("radio.total_bandwidth_hz must be > 0");
    if (fading_mean <= 0.0) throw ConfigError("radio.fading_mean must be > 0");
    if (noise_w <= 0.0) throw ConfigError("radio.noise_w must be > 0");
    if (p_max_w <= 0.0) throw ConfigError("radio.p_max_w must be > 0");
    if (power_levels_w.empty()) throw ConfigError("radio.power_levels_w must be non-empty");
    double prev = 0.0;
    for (double p : power_levels_w) {
        if (p <= 0.0) throw ConfigError("radio.power_levels_w entries must be > 0");
        if (p < prev) throw ConfigError("radio.power_levels_w must be sorted ascending");
        if (p > p_max_w) throw ConfigError("radio.power_levels_w entries must not exceed radio.p_max_w");
        prev = p;
    }
}

void SlotAssignment::validate(const RadioConfig& cfg) const {
    std::vector<int> occupancy(cfg.subcarriers, 0);
    for (int u = 0; u < users(); ++u) {
        int n = subcarrier[u];
        if (n == -1) {
            if (power_w[u] != 0.0) throw ContractError("idle user " + std::to_string(u) + " has non-zero power");
            continue;
        }
        if (n < 0 || n >= cfg.subcarriers)
            throw ContractError("user " + std::to_string(u) + " on invalid subcarrier " + std::to_string(n));
        if (power_w[u] <= 0.0 || power_w[u] > cfg.p_max_w)
            throw ContractError("user " + std::to_string(u) + " power outside (0, p_max]");
        occupancy[n] += 1;
        if (occupancy[n] > 2)
            throw ContractError("subcarrier " + std::to_string(n) + " carries more than 2 users");
    }
}

GainMatrix sample_gains(Rng& rng, int users, int subcarriers, double mean) {
    GainMatrix g(users, subcarriers);
    for (double& v : g.g) v = -mean * std::log(uniform_open01(rng));
    return g;
}

std::vector<int> decoding_order(const SlotAssignment& a, const GainMatrix& g, int n) {
    std::vector<int> order;
    for (int u = 0; u < a.users(); ++u)
        if (a.subcarrier[u] == n) order.push_back(u);
    std::stable_sort(order.begin(), order.end(),
                     [&](int u, int v) { return g.at(u, n) < g.at(v, n); });
    return order;
}

double subcarrier_rate(int u, int n, const SlotAssignment& a, const GainMatrix& g,
                       const RadioConfig& cfg) {
    if (n < 0 || n >= cfg.subcarriers || a.subcarrier[u] != n)
        throw ContractError("subcarrier_rate: user " + std::to_string(u) + " is not assigned to subcarrier " +
                            std::to_string(n));
    std::vector<int> order = decoding_order(a, g, n);
    double interference = 0.0;
    bool seen = false;
    for (int v : order) {
        if (v == u) {
            seen = true;
            continue;
        }
        if (seen) interference += a.power_w[v] * g.at(v, n);
    }
    double sinr = a.power_w[u] * g.at(u, n) / (cfg.noise_w + interference);
    return cfg.subcarrier_bandwidth_hz() * std::log2(1.0 + sinr);
}

std::vector<double> slot_rates(const SlotAssignment& a, const GainMatrix& g,
                               const RadioConfig& cfg) {
    a.validate(cfg);
    std::vector<double> rates(a.users(), 0.0);
    for (int u = 0; u < a.users(); ++u) {
        if (a.subcarrier[u] == -1) continue;
        rates[u] = subcarrier_rate(u, a.subcarrier[u], a, g, cfg);
    }
    return rates;
}

}  // namespace aoisim
