#include "aoisim/common.hpp"

#include <cmath>
#include <thread>
#include <vector>

namespace aoisim {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_open01(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

int uniform_int(Rng& rng, int n) {
    int k = static_cast<int>(uniform01(rng) * n);
    return k >= n ? n - 1 : k;
}

double gaussian(Rng& rng) {
    double u = uniform_open01(rng);
    double v = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
}

void parallel_shards(int n_shards, const std::function<void(int)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    int workers = static_cast<int>(hw == 0 ? 1 : hw);
    if (workers > n_shards) workers = n_shards;
    if (workers <= 1) {
        for (int s = 0; s < n_shards; ++s) fn(s);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int s = w; s < n_shards; s += workers) fn(s);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace aoisim
