#pragma once

#include <cstdint>
#include <string>

#include "wmax/network.hpp"

namespace wmax {

struct Checkpoint {
  NetworkParams params;
  std::uint64_t seed = 0;
};

// JSON checkpoint, format "wmax-checkpoint" version 1: layer_sizes, per-layer
// row-major flattened weights, biases, and the originating seed. Doubles are
// written with round-trip precision. Throws IoError on missing/unreadable
// files or version mismatch.
void save_checkpoint(const std::string& path, const NetworkParams& params,
                     std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace wmax
