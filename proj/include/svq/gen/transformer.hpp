#pragma once

#include <string>
#include <vector>

#include "svq/numerics/layers.hpp"

namespace svq {

struct TransformerShape {
  std::size_t d_model = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  std::size_t max_len = 64;  // longest sequence the position table covers
};

// Pre-LN encoder and causal decoder stacks over packed variable-length
// sequences, with fixed sinusoidal positions added to the inputs. Parameters
// live under "<prefix>/encoder/..." and "<prefix>/decoder/...".
class Seq2SeqCore {
 public:
  Seq2SeqCore() = default;
  Seq2SeqCore(ParamStore& store, const std::string& prefix, const TransformerShape& shape, Rng& rng);

  // x: embedded inputs [sum(lengths), d]. Dropout only when rng is given.
  Var encode(const Var& x, const std::vector<std::size_t>& lengths, Rng* rng) const;
  Var decode(const Var& y, const std::vector<std::size_t>& lengths, const Var& memory,
             const std::vector<std::size_t>& memory_lengths, Rng* rng) const;

  const TransformerShape& shape() const { return shape_; }

 private:
  struct Layer {
    LayerNorm ln_self, ln_cross, ln_ff;
    Linear q, k, v, o;
    Linear cq, ck, cv, co;
    Linear ff1, ff2;
  };
  TransformerShape shape_;
  std::vector<Layer> enc_, dec_;
  LayerNorm enc_ln_, dec_ln_;
  Tensor positions_;

  Var with_positions(const Var& x, const std::vector<std::size_t>& lengths, Rng* rng) const;
};

Tensor sinusoidal_positions(std::size_t len, std::size_t d);

}  // namespace svq
