#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace aoisim {

// Error taxonomy. The CLI maps ConfigError to exit code 2, everything else
// that escapes to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated a documented precondition (infeasible action, backward on
// a non-scalar, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SizeError : std::runtime_error {
    explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training loss goes non-finite; carries the diagnostic context.
struct TrainDivergedError : std::runtime_error {
    explicit TrainDivergedError(const std::string& msg) : std::runtime_error(msg) {}
};

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent sub-seeds from (seed, index)
// pairs so parallel workers get reproducible streams.
uint64_t mix_seed(uint64_t a, uint64_t b);

// Uniform in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

// Uniform strictly inside (0, 1); safe as a log() argument.
double uniform_open01(Rng& rng);

// Uniform integer in [0, n); n >= 1.
int uniform_int(Rng& rng, int n);

// Standard normal via Box-Muller (two uniforms per draw, no cached spare, so
// the stream is insensitive to call-site interleaving).
double gaussian(Rng& rng);

// In-place Fisher-Yates; std::shuffle is implementation-defined, this is not.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(uniform_int(rng, static_cast<int>(i)));
        std::swap(v[i - 1], v[j]);
    }
}

// Runs fn(0), ..., fn(n_shards-1) on up to `hardware_concurrency` threads.
// Shards must be independent; any ordered reduction happens at the caller.
void parallel_shards(int n_shards, const std::function<void(int)>& fn);

}  // namespace aoisim
