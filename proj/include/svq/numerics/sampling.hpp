#pragma once

#include "svq/numerics/rng.hpp"
#include "svq/numerics/tensor.hpp"

namespace svq {

inline constexpr double kGumbelClamp = 1e-10;

// Standard Gumbel samples g = -log(-log(u)), u ~ U(0,1) clamped to
// [kGumbelClamp, 1 - kGumbelClamp].
Tensor sample_gumbel(const Shape& shape, Rng& rng);
double gumbel_from_uniform(double u);

}  // namespace svq
