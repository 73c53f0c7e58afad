#pragma once

#include <map>
#include <string>
#include <vector>

#include "svq/numerics/autograd.hpp"
#include "svq/numerics/ops.hpp"
#include "svq/numerics/rng.hpp"

namespace svq {

using NamedTensors = std::map<std::string, Tensor>;

// Ordered registry of a model's tensors. Entries are Var handles shared with
// the layers that use them; buffers (e.g. running statistics) are stored but
// never handed to an optimizer.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  Var add_buffer(const std::string& name, Tensor init);

  std::vector<Var> trainable() const;
  std::vector<std::string> names() const;
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t parameter_count() const;

  NamedTensors state() const;
  // Copies values in by name; every entry of this store must be present.
  void load(const NamedTensors& values);
  void set_trainable(bool on);
  void zero_grad();

 private:
  struct Entry {
    std::string name;
    Var var;
    bool trainable;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-uniform [in, out] matrix.
Tensor glorot(std::size_t in, std::size_t out, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

struct Linear {
  Var weight;  // [in, out]
  Var bias;    // [out], undefined when constructed without bias
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
  Var operator()(const Var& x) const;
};

struct BatchNorm {
  Var gamma, beta;
  Var running_mean, running_var;
  double momentum = 0.1;
  BatchNorm() = default;
  BatchNorm(ParamStore& store, const std::string& name, std::size_t dim, double momentum = 0.1);
  Var operator()(const Var& x, bool training) const;
};

}  // namespace svq
