#pragma once

#include <cstdint>
#include <string>

#include "svq/dvae/stgp.hpp"
#include "svq/gen/generator.hpp"
#include "svq/numerics/gradcheck.hpp"

namespace svq {

struct GradSuiteResult {
  std::string module;
  GradCheckResult loss;    // full training loss
  GradCheckResult output;  // mean of the model output (encoder logits / next-token logits)
  double max_rel_error() const { return std::max(loss.max_rel_error, output.max_rel_error); }
};

// Central differences (h = 1e-5) on a 2-segment batch. Zero-initialized
// tensors are perturbed first so every parameter carries gradient.
GradSuiteResult dvae_gradcheck(const DvaeConfig& config, const SkeletonSpec& skeleton, std::uint64_t seed,
                               std::size_t coords_per_tensor = 6);
// Same for the generator loss (cross entropy plus latent term) on a
// 2-item batch; dropout is disabled for the check.
GradSuiteResult generator_gradcheck(GeneratorConfig config, std::uint64_t seed, std::size_t coords_per_tensor = 6);

}  // namespace svq
