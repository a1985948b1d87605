#pragma once

#include <vector>

#include "aoisim/common.hpp"

namespace aoisim {

// Uplink radio parameters. One slot lasts one time unit, so bits/s and
// bits/slot coincide.
struct RadioConfig {
    int subcarriers = 8;
    double total_bandwidth_hz = 1e6;
    double fading_mean = 1.0;
    double noise_w = 1e-3;
    double p_max_w = 0.1;
    std::vector<double> power_levels_w = {0.025, 0.05, 0.075, 0.1};

    double subcarrier_bandwidth_hz() const { return total_bandwidth_hz / subcarriers; }
    void validate() const;  // throws ConfigError with the offending key
};

// Per-slot channel power gains, users x subcarriers, redrawn every slot.
struct GainMatrix {
    int users = 0;
    int subcarriers = 0;
    std::vector<double> g;

    GainMatrix() = default;
    GainMatrix(int users_, int subcarriers_)
        : users(users_), subcarriers(subcarriers_),
          g(static_cast<size_t>(users_) * subcarriers_, 0.0) {}

    double& at(int u, int n) { return g[static_cast<size_t>(u) * subcarriers + n]; }
    double at(int u, int n) const { return g[static_cast<size_t>(u) * subcarriers + n]; }
};

// One slot's transmit decision after power levels are resolved.
// subcarrier[u] == -1 means idle; idle users carry power 0.
struct SlotAssignment {
    std::vector<int> subcarrier;
    std::vector<double> power_w;

    int users() const { return static_cast<int>(subcarrier.size()); }
    // Checks C2 (<= 2 users per subcarrier) and C3 (power bounds); C1 holds by
    // construction since each user stores a single choice.
    void validate(const RadioConfig& cfg) const;  // throws ContractError
};

// I.i.d. unit-mean-scaled exponential gains (Rayleigh power fading),
// deterministic for a given rng state. All entries strictly positive.
GainMatrix sample_gains(Rng& rng, int users, int subcarriers, double mean = 1.0);

// Users sharing subcarrier n ordered weakest gain first; the SIC receiver
// decodes in this order. Ties break toward the lower user index.
std::vector<int> decoding_order(const SlotAssignment& a, const GainMatrix& g, int n);

// Achievable bits this slot for user u on subcarrier n. Interference comes
// from co-channel users decoded after u (stronger gains, not yet cancelled).
double subcarrier_rate(int u, int n, const SlotAssignment& a, const GainMatrix& g,
                       const RadioConfig& cfg);

// Per-user rates for a full assignment; idle users get 0.
std::vector<double> slot_rates(const SlotAssignment& a, const GainMatrix& g,
                               const RadioConfig& cfg);

}  // namespace aoisim
