#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "svq/numerics/autograd.hpp"

namespace svq {

struct GradCheckOptions {
  double h = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +-h probe moved a ReLU across its kink; central
  // differences are meaningless there.
  std::size_t skipped_at_kinks = 0;
  std::string worst;
};

// Compares reverse-mode gradients of loss() against central differences,
// reporting max |analytic - numeric| / max(1, |analytic|). loss() must be
// deterministic; it is evaluated twice up front and rejected if it is not.
GradCheckResult finite_diff_check(const std::function<Var()>& loss, const std::vector<Var>& params,
                                  const std::vector<std::string>& names = {}, GradCheckOptions options = {});

// Single-input form: f maps a tensor to a scalar.
GradCheckResult finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace svq
