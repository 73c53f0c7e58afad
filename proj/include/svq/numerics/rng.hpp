#pragma once

#include <cstddef>
#include <cstdint>

namespace svq {

// Counter-based generator: output i is a bijective mix of (key, i), so a
// stream can be split into independent substreams without shared state.
class Rng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0);
  static Rng from_state(State s);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform on (0, 1].
  double uniform_pos();
  double normal();
  std::size_t below(std::size_t n);

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  State state() const { return state_; }

 private:
  State state_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_string(std::uint64_t seed, const char* data, std::size_t len);

}  // namespace svq
