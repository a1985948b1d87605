#include <algorithm>
#include <cmath>

#include "aoisim/channel.hpp"
#include "doctest.h"

using namespace aoisim;

namespace {

// Independent evaluation of the SIC rate: sort co-channel users by gain
// (ascending, ties to the lower index), add up the received power of everyone
// decoded after u, and apply the log formula directly.
double rate_reference(int u, int n, const SlotAssignment& a, const GainMatrix& g,
                      const RadioConfig& cfg) {
    std::vector<int> sharers;
    for (int v = 0; v < a.users(); ++v)
        if (a.subcarrier[v] == n) sharers.push_back(v);
    std::sort(sharers.begin(), sharers.end(), [&](int x, int y) {
        if (g.at(x, n) != g.at(y, n)) return g.at(x, n) < g.at(y, n);
        return x < y;
    });
    double interference = 0.0;
    bool after_u = false;
    for (int v : sharers) {
        if (after_u) interference += a.power_w[v] * g.at(v, n);
        if (v == u) after_u = true;
    }
    double b = cfg.total_bandwidth_hz / cfg.subcarriers;
    return b * std::log2(1.0 + a.power_w[u] * g.at(u, n) / (cfg.noise_w + interference));
}

RadioConfig two_subcarrier_radio() {
    RadioConfig cfg;
    cfg.subcarriers = 8;  // B = 125 kHz
    return cfg;
}

}  // namespace

TEST_CASE("gain sampling statistics") {
    Rng rng(0);
    const int draws = 1000000;
    GainMatrix g = sample_gains(rng, 1000, 1000, 1.0);
    double sum = 0.0;
    long above_one = 0;
    long nonpositive = 0;
    for (double v : g.g) {
        if (v <= 0.0) nonpositive += 1;
        sum += v;
        if (v > 1.0) above_one += 1;
    }
    CHECK(nonpositive == 0);
    CHECK(std::abs(sum / draws - 1.0) < 0.01);
    CHECK(std::abs(static_cast<double>(above_one) / draws - std::exp(-1.0)) < 0.005);

    Rng r1(42), r2(42);
    GainMatrix a = sample_gains(r1, 4, 3, 1.0);
    GainMatrix b = sample_gains(r2, 4, 3, 1.0);
    CHECK(a.g == b.g);
}

TEST_CASE("decoding order is weakest first") {
    RadioConfig cfg = two_subcarrier_radio();
    GainMatrix g(3, cfg.subcarriers);
    SlotAssignment a;
    a.subcarrier = {0, 0, -1};
    a.power_w = {0.1, 0.1, 0.0};

    g.at(0, 0) = 1.0;
    g.at(1, 0) = 0.5;
    CHECK(decoding_order(a, g, 0) == std::vector<int>{1, 0});

    SlotAssignment lone;
    lone.subcarrier = {-1, 0, -1};
    lone.power_w = {0.0, 0.1, 0.0};
    CHECK(decoding_order(lone, g, 0) == std::vector<int>{1});

    g.at(0, 0) = 0.7;
    g.at(1, 0) = 0.7;
    CHECK(decoding_order(a, g, 0) == std::vector<int>{0, 1});  // tie: lower index first
}

TEST_CASE("subcarrier rate matches the frozen oracle values") {
    RadioConfig cfg = two_subcarrier_radio();
    GainMatrix g(2, cfg.subcarriers);
    g.at(0, 0) = 1.0;
    g.at(1, 0) = 0.5;

    SlotAssignment lone;
    lone.subcarrier = {0, -1};
    lone.power_w = {0.1, 0.0};
    // oracle: 125000 * log2(1 + 0.1/1e-3) = 832276.4353439744
    CHECK(std::abs(subcarrier_rate(0, 0, lone, g, cfg) - 832276.4353439744) < 1.0);

    SlotAssignment pair;
    pair.subcarrier = {0, 0};
    pair.power_w = {0.1, 0.1};
    // strongest decodes clean; weakest carries the strong user's interference:
    // 125000 * log2(1 + 0.05 / (1e-3 + 0.1)) = 72524.15707166052
    CHECK(std::abs(subcarrier_rate(0, 0, pair, g, cfg) - 832276.4353439744) < 1.0);
    CHECK(std::abs(subcarrier_rate(1, 0, pair, g, cfg) - 72524.15707166052) < 1.0);

    SlotAssignment silent;
    silent.subcarrier = {0, -1};
    silent.power_w = {0.0, 0.0};
    CHECK(subcarrier_rate(0, 0, silent, g, cfg) == 0.0);

    CHECK_THROWS_AS(subcarrier_rate(1, 3, pair, g, cfg), ContractError);
}

TEST_CASE("rate formula against independent evaluation on random configurations") {
    Rng rng(123);
    RadioConfig cfg = two_subcarrier_radio();
    long mismatches = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        int users = 2 + uniform_int(rng, 5);
        GainMatrix g = sample_gains(rng, users, cfg.subcarriers, 1.0);
        SlotAssignment a;
        a.subcarrier.assign(users, -1);
        a.power_w.assign(users, 0.0);
        std::vector<int> occupancy(cfg.subcarriers, 0);
        for (int u = 0; u < users; ++u) {
            if (uniform01(rng) < 0.25) continue;
            int n = uniform_int(rng, cfg.subcarriers);
            if (occupancy[n] >= 2) continue;
            occupancy[n] += 1;
            a.subcarrier[u] = n;
            a.power_w[u] = cfg.power_levels_w[uniform_int(rng, static_cast<int>(cfg.power_levels_w.size()))];
        }
        for (int u = 0; u < users; ++u) {
            if (a.subcarrier[u] == -1) continue;
            double got = subcarrier_rate(u, a.subcarrier[u], a, g, cfg);
            double want = rate_reference(u, a.subcarrier[u], a, g, cfg);
            if (std::abs(got - want) > 1e-12 * std::max(1.0, std::abs(want))) mismatches += 1;
            if (!(got >= 0.0) || !std::isfinite(got)) mismatches += 1;
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("stronger co-channel user never helps the weaker one") {
    Rng rng(321);
    RadioConfig cfg = two_subcarrier_radio();
    long bad = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        GainMatrix g = sample_gains(rng, 2, cfg.subcarriers, 1.0);
        // force user 0 weaker on subcarrier 0
        if (g.at(0, 0) > g.at(1, 0)) std::swap(g.at(0, 0), g.at(1, 0));
        double p0 = cfg.power_levels_w[uniform_int(rng, 4)];
        double p1 = cfg.power_levels_w[uniform_int(rng, 4)];

        SlotAssignment alone;
        alone.subcarrier = {0, -1};
        alone.power_w = {p0, 0.0};
        SlotAssignment shared;
        shared.subcarrier = {0, 0};
        shared.power_w = {p0, p1};

        double solo = subcarrier_rate(0, 0, alone, g, cfg);
        double with_interferer = subcarrier_rate(0, 0, shared, g, cfg);
        if (with_interferer > solo) bad += 1;

        // the strongest user on the subcarrier sees no interference at all
        SlotAssignment strong_alone;
        strong_alone.subcarrier = {-1, 0};
        strong_alone.power_w = {0.0, p1};
        if (subcarrier_rate(1, 0, shared, g, cfg) != subcarrier_rate(1, 0, strong_alone, g, cfg)) bad += 1;
    }
    CHECK(bad == 0);
}

TEST_CASE("slot rates cover idle users and reject bad assignments") {
    RadioConfig cfg = two_subcarrier_radio();
    GainMatrix g(3, cfg.subcarriers);
    for (double& v : g.g) v = 1.0;
    g.at(1, 0) = 0.5;

    SlotAssignment idle;
    idle.subcarrier = {-1, -1, -1};
    idle.power_w = {0, 0, 0};
    std::vector<double> zero = slot_rates(idle, g, cfg);
    for (double r : zero) CHECK(r == 0.0);

    SlotAssignment pair;
    pair.subcarrier = {0, 0, -1};
    pair.power_w = {0.1, 0.1, 0.0};
    std::vector<double> rates = slot_rates(pair, g, cfg);
    CHECK(std::abs(rates[0] - 832276.4353439744) < 1.0);
    CHECK(std::abs(rates[1] - 72524.15707166052) < 1.0);
    CHECK(rates[2] == 0.0);

    // users on disjoint subcarriers see no interference
    SlotAssignment disjoint;
    disjoint.subcarrier = {0, 1, -1};
    disjoint.power_w = {0.1, 0.1, 0.0};
    std::vector<double> free = slot_rates(disjoint, g, cfg);
    SlotAssignment only1;
    only1.subcarrier = {-1, 1, -1};
    only1.power_w = {0.0, 0.1, 0.0};
    CHECK(free[0] == doctest::Approx(832276.4353439744).epsilon(1e-12));
    CHECK(free[1] == subcarrier_rate(1, 1, only1, g, cfg));

    SlotAssignment crowded;
    crowded.subcarrier = {0, 0, 0};
    crowded.power_w = {0.1, 0.1, 0.1};
    CHECK_THROWS_AS(slot_rates(crowded, g, cfg), ContractError);

    SlotAssignment hot;
    hot.subcarrier = {0, -1, -1};
    hot.power_w = {0.2, 0.0, 0.0};  // above p_max
    CHECK_THROWS_AS(slot_rates(hot, g, cfg), ContractError);
}
