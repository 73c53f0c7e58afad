#include "svq/numerics/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace svq {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, Var::parameter(std::move(init)), true});
  return entries_.back().var;
}

Var ParamStore::add_buffer(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, Var(std::move(init), false), false});
  return entries_.back().var;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.var);
  return out;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].var;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.var.size();
  return n;
}

NamedTensors ParamStore::state() const {
  NamedTensors out;
  for (const auto& e : entries_) out[e.name] = e.var.value();
  return out;
}

void ParamStore::load(const NamedTensors& values) {
  for (auto& e : entries_) {
    auto it = values.find(e.name);
    if (it == values.end()) throw std::runtime_error("checkpoint is missing tensor " + e.name);
    if (it->second.shape() != e.var.shape()) {
      throw ShapeError("tensor " + e.name + " has shape " + shape_str(it->second.shape()) + ", model expects " +
                       shape_str(e.var.shape()));
    }
    e.var.mutable_value() = it->second;
  }
}

void ParamStore::set_trainable(bool on) {
  for (auto& e : entries_) {
    if (e.trainable) e.var.set_requires_grad(on);
  }
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  Tensor t({in, out});
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * a;
  return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal() * stddev;
  return t;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias) {
  weight = store.add(name + "/weight", glorot(in, out, rng));
  if (with_bias) bias = store.add(name + "/bias", Tensor::zeros({out}));
}

Var Linear::operator()(const Var& x) const {
  Var y = ops::matmul(x, weight);
  return bias.defined() ? ops::add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim) {
  gamma = store.add(name + "/gamma", Tensor::ones({dim}));
  beta = store.add(name + "/beta", Tensor::zeros({dim}));
}

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm_rows(x, gamma, beta); }

BatchNorm::BatchNorm(ParamStore& store, const std::string& name, std::size_t dim, double mom) : momentum(mom) {
  gamma = store.add(name + "/gamma", Tensor::ones({dim}));
  beta = store.add(name + "/beta", Tensor::zeros({dim}));
  running_mean = store.add_buffer(name + "/running_mean", Tensor::zeros({dim}));
  running_var = store.add_buffer(name + "/running_var", Tensor::ones({dim}));
}

Var BatchNorm::operator()(const Var& x, bool training) const {
  Var rm = running_mean, rv = running_var;
  return ops::batch_norm_rows(x, gamma, beta, {rm.mutable_value(), rv.mutable_value()}, training, momentum);
}

}  // namespace svq
