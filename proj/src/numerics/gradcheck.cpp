#include "svq/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "svq/numerics/rng.hpp"

namespace svq {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const std::function<Var()>& loss) {
  NoGradGuard no_grad;
  reset_kink_signature();
  Var l = loss();
  if (l.size() != 1) throw ShapeError("gradient check needs a scalar loss, got " + shape_str(l.shape()));
  return {l.item(), kink_signature()};
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

struct TrackingScope {
  TrackingScope() { set_kink_tracking(true); }
  ~TrackingScope() { set_kink_tracking(false); }
};

}  // namespace

GradCheckResult finite_diff_check(const std::function<Var()>& loss, const std::vector<Var>& params,
                                  const std::vector<std::string>& names, GradCheckOptions options) {
  if (!(options.h > 0.0)) throw std::invalid_argument("finite_diff_check: step h must be positive");
  TrackingScope tracking;

  const Probe base = evaluate(loss);
  const Probe again = evaluate(loss);
  if (!bit_equal(base.value, again.value) || base.signature != again.signature) {
    throw std::invalid_argument("finite_diff_check: loss is not deterministic (two equal-input evaluations differ)");
  }

  std::vector<Tensor> analytic;
  {
    for (const auto& p : params) Var(p).zero_grad();
    Graph graph;
    Var l = loss();
    graph.backward(l);
    for (const auto& p : params) analytic.push_back(p.grad());
  }

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var p = params[pi];
    Tensor& value = p.mutable_value();
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double saved = value[c];
      value[c] = saved + options.h;
      const Probe plus = evaluate(loss);
      value[c] = saved - options.h;
      const Probe minus = evaluate(loss);
      value[c] = saved;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++result.skipped_at_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.h);
      const double a = analytic[pi][c];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        const std::string name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
        result.worst = name + "[" + std::to_string(c) + "]";
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
  Var input = Var::parameter(x);
  GradCheckOptions opts;
  opts.h = h;
  return finite_diff_check([&] { return f(input); }, {input}, {"x"}, opts);
}

}  // namespace svq
