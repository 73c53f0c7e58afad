#include "svq/numerics/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace svq {

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kGumbelClamp, 1.0 - kGumbelClamp);
  return -std::log(-std::log(u));
}

Tensor sample_gumbel(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = gumbel_from_uniform(rng.uniform());
  return t;
}

}  // namespace svq
