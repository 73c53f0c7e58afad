#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "svq/numerics/tensor.hpp"

namespace svq {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Gradient buffer shaped like value, zero-initialized on first use.
  Tensor& grad_buffer();
};

// Handle to a value that may participate in reverse-mode differentiation.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Direct write access for optimizers and checkpoint loading.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zero tensor when nothing has accumulated yet.
  Tensor grad() const;
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  friend Var make_op_result(Tensor, const char*, std::initializer_list<Var>, std::function<void(Node&)>);
  std::shared_ptr<Node> node_;
};

// Records operations while alive on the current thread. Without an active
// graph ops compute values only, which is how inference runs.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active();

  void record(std::shared_ptr<Node> node);
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(leaf) into every requires-grad leaf reachable from
  // loss. The graph must be reset before it can record and run again.
  void backward(const Var& loss);
  void reset();

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
  Graph* previous_ = nullptr;
  bool consumed_ = false;
};

// Temporarily disables recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph* saved_;
};

// Builds the output of an op. The node is recorded (with parents and the
// backward closure) only when a graph is active and an input requires grad.
// Throws NumericError if value has a non-finite entry.
Var make_op_result(Tensor value, const char* op, std::initializer_list<Var> inputs,
                   std::function<void(Node&)> backward);

// Signature of activation patterns seen by piecewise-linear ops since the
// last reset; used by the finite-difference checker to detect kinks.
void set_kink_tracking(bool on);
bool kink_tracking();
void reset_kink_signature();
std::uint64_t kink_signature();
void mix_kink_signature(std::uint64_t v);

}  // namespace svq
