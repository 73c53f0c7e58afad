#include "svq/numerics/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace svq {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_string(std::uint64_t seed, const char* data, std::size_t len) {
  std::uint64_t h = 0xCBF29CE484222325ull ^ mix64(seed);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001B3ull;
  }
  return mix64(h);
}

Rng::Rng(std::uint64_t seed) : state_{mix64(seed + kGolden), 0} {}

Rng Rng::from_state(State s) {
  Rng r;
  r.state_ = s;
  return r;
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = state_.counter++;
  return mix64(state_.key ^ mix64(c * kGolden + 0x632BE59BD9B4E019ull));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

double Rng::normal() {
  const double u1 = uniform_pos();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

Rng Rng::split(std::uint64_t stream) const {
  Rng r;
  r.state_ = {mix64(state_.key ^ mix64(stream + 0xD1B54A32D192ED03ull)), 0};
  return r;
}

}  // namespace svq
