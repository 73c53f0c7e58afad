#include "svq/numerics/autograd.hpp"

#include <string>

#include "svq/numerics/rng.hpp"

namespace svq {

namespace {
thread_local Graph* g_active = nullptr;
thread_local std::uint64_t g_kink = 0;
thread_local bool g_track_kinks = false;
}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor::zeros(node_->value.shape());
  return node_->grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Graph::Graph() : previous_(g_active) { g_active = this; }

Graph::~Graph() {
  if (g_active == this) g_active = previous_;
}

Graph* Graph::active() { return g_active; }

void Graph::record(std::shared_ptr<Node> node) {
  if (consumed_) throw std::logic_error("graph already ran backward; reset() before recording again");
  nodes_.push_back(std::move(node));
}

void Graph::backward(const Var& loss) {
  if (consumed_) throw std::logic_error("graph already ran backward; reset() before reuse");
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  Node* root = loss.node();
  root->grad_buffer()[0] += 1.0;
  // Creation order is a topological order.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
  // Intermediate gradients are no longer needed; leaves keep theirs.
  for (auto& n : nodes_) {
    n->backward = nullptr;
    n->grad = Tensor();
  }
}

void Graph::reset() {
  nodes_.clear();
  consumed_ = false;
}

NoGradGuard::NoGradGuard() : saved_(g_active) { g_active = nullptr; }
NoGradGuard::~NoGradGuard() { g_active = saved_; }

Var make_op_result(Tensor value, const char* op, std::initializer_list<Var> inputs,
                   std::function<void(Node&)> backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output " + shape_str(value.shape()));
  }
  Var out(std::move(value), false);
  out.node_->op = op;
  Graph* g = g_active;
  if (g == nullptr) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (const auto& in : inputs) out.node_->parents.push_back(in.node_ptr());
  out.node_->backward = std::move(backward);
  g->record(out.node_);
  return out;
}

void set_kink_tracking(bool on) { g_track_kinks = on; }
bool kink_tracking() { return g_track_kinks; }
void reset_kink_signature() { g_kink = 0; }
std::uint64_t kink_signature() { return g_kink; }
void mix_kink_signature(std::uint64_t v) { g_kink = mix64(g_kink ^ v); }

}  // namespace svq
