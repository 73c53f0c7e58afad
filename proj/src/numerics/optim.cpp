#include "svq/numerics/optim.hpp"

#include <cmath>
#include <numbers>

namespace svq {

AdamW::AdamW(std::vector<Var> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    state_.first_moment.push_back(Tensor::zeros(p.shape()));
    state_.second_moment.push_back(Tensor::zeros(p.shape()));
  }
}

void AdamW::set_state(OptimizerState state) {
  if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size()) {
    throw ShapeError("optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.first_moment[i].shape() != params_[i].shape() || state.second_moment[i].shape() != params_[i].shape()) {
      throw ShapeError("optimizer moment shape mismatch for parameter " + std::to_string(i));
    }
  }
  state_ = std::move(state);
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].has_grad() && !params_[i].node()->grad.all_finite()) {
      throw NumericError("AdamW: non-finite gradient in parameter " + std::to_string(i) + "; step refused");
    }
  }
  const std::uint64_t t = state_.step + 1;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double decay = 1.0 - config_.lr * config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].mutable_value();
    Tensor& m = state_.first_moment[i];
    Tensor& v = state_.second_moment[i];
    const Tensor* g = params_[i].has_grad() ? &params_[i].node()->grad : nullptr;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = p[j] * decay - config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  state_.step = t;
}

double scheduled_lr(double base, std::size_t step, std::size_t total, bool cosine, double floor) {
  if (!cosine || total <= 1) return base;
  const double f = static_cast<double>(step) / static_cast<double>(total - 1);
  return base * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * f)));
}

}  // namespace svq
