#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "svq/numerics/layers.hpp"
#include "svq/numerics/rng.hpp"

namespace svq {

// Binary layout, all integers little-endian:
//   "SVQN"  u32 version
//   u64 n   config JSON (n bytes, UTF-8)
//   u64 rng key   u64 rng counter
//   u64 tensor count, then per tensor in name order:
//     u32 n  name (n bytes)   u8 dtype (0 = f64)   u32 rank   u64 dims[rank]
//     payload: prod(dims) IEEE-754 doubles, little-endian, row-major
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  nlohmann::json config = nlohmann::json::object();
  Rng::State rng;
  NamedTensors tensors;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace svq
