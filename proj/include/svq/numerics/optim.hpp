#pragma once

#include <cstdint>
#include <vector>

#include "svq/numerics/autograd.hpp"

namespace svq {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

// AdamW with decoupled weight decay:
//   p <- p - lr*wd*p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(std::vector<Var> params, AdamWConfig config);

  // Refuses (throws NumericError, parameters untouched) if any gradient is
  // non-finite.
  void step();
  void zero_grad();

  AdamWConfig& config() { return config_; }
  const OptimizerState& state() const { return state_; }
  void set_state(OptimizerState state);
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  AdamWConfig config_;
  OptimizerState state_;
};

// base * (floor + (1 - floor) * (1 + cos(pi * step / (total - 1))) / 2)
double scheduled_lr(double base, std::size_t step, std::size_t total, bool cosine, double floor);

}  // namespace svq
