#pragma once

#include <string>
#include <utility>
#include <vector>

#include "aoisim/tensor.hpp"

namespace aoisim {

// Binary parameter container. Layout, all little-endian:
//   u32 magic "AOCK", u32 format version (1), u64 record count,
//   per record: u32 name length, UTF-8 name bytes,
//               u32 ndim, u64 dims[ndim], f64 values (row-major).
// Round-trips bit-exactly.

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Matches records to parameters by name; every parameter must be present with
// an identical shape, otherwise throws CheckpointError naming the offender.
void apply_checkpoint(const std::vector<std::pair<std::string, Tensor>>& records,
                      const std::vector<Parameter*>& params);

}  // namespace aoisim
