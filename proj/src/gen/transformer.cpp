#include "svq/gen/transformer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace svq {

namespace {

Var maybe_dropout(const Var& x, double p, Rng* rng) { return rng && p > 0.0 ? ops::dropout(x, p, *rng) : x; }

Var attend(const Linear& q, const Linear& k, const Linear& v, const Linear& o, const Var& xq, const Var& xkv,
           const ops::AttentionLayout& layout) {
  return o(ops::attention(q(xq), k(xkv), v(xkv), layout));
}

}  // namespace

Tensor sinusoidal_positions(std::size_t len, std::size_t d) {
  Tensor t({len, d});
  for (std::size_t p = 0; p < len; ++p)
    for (std::size_t i = 0; i < d; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      t[p * d + i] = std::sin(static_cast<double>(p) * rate);
      if (i + 1 < d) t[p * d + i + 1] = std::cos(static_cast<double>(p) * rate);
    }
  return t;
}

Seq2SeqCore::Seq2SeqCore(ParamStore& store, const std::string& prefix, const TransformerShape& shape, Rng& rng)
    : shape_(shape) {
  const std::size_t d = shape.d_model;
  if (d == 0 || shape.heads == 0 || d % shape.heads != 0) throw std::invalid_argument("heads must divide d_model");
  auto make_layer = [&](const std::string& name, bool cross) {
    Layer l;
    l.ln_self = LayerNorm(store, name + "/ln_self", d);
    l.q = Linear(store, name + "/self_q", d, d, rng);
    l.k = Linear(store, name + "/self_k", d, d, rng);
    l.v = Linear(store, name + "/self_v", d, d, rng);
    l.o = Linear(store, name + "/self_o", d, d, rng);
    if (cross) {
      l.ln_cross = LayerNorm(store, name + "/ln_cross", d);
      l.cq = Linear(store, name + "/cross_q", d, d, rng);
      l.ck = Linear(store, name + "/cross_k", d, d, rng);
      l.cv = Linear(store, name + "/cross_v", d, d, rng);
      l.co = Linear(store, name + "/cross_o", d, d, rng);
    }
    l.ln_ff = LayerNorm(store, name + "/ln_ff", d);
    l.ff1 = Linear(store, name + "/ff1", d, shape.d_ff, rng);
    l.ff2 = Linear(store, name + "/ff2", shape.d_ff, d, rng);
    return l;
  };
  for (std::size_t i = 0; i < shape.layers; ++i)
    enc_.push_back(make_layer(prefix + "/encoder/layer" + std::to_string(i), false));
  enc_ln_ = LayerNorm(store, prefix + "/encoder/ln", d);
  for (std::size_t i = 0; i < shape.layers; ++i)
    dec_.push_back(make_layer(prefix + "/decoder/layer" + std::to_string(i), true));
  dec_ln_ = LayerNorm(store, prefix + "/decoder/ln", d);
  positions_ = sinusoidal_positions(shape.max_len, d);
}

Var Seq2SeqCore::with_positions(const Var& x, const std::vector<std::size_t>& lengths, Rng* rng) const {
  const std::size_t d = shape_.d_model;
  const std::size_t n = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  Tensor pos({n, d});
  std::size_t r = 0;
  for (std::size_t len : lengths) {
    if (len > shape_.max_len) {
      throw std::invalid_argument("sequence of " + std::to_string(len) + " exceeds position table " +
                                  std::to_string(shape_.max_len));
    }
    for (std::size_t p = 0; p < len; ++p, ++r) std::copy_n(positions_.ptr() + p * d, d, pos.ptr() + r * d);
  }
  return maybe_dropout(ops::add_const(x, pos), shape_.dropout, rng);
}

Var Seq2SeqCore::encode(const Var& x, const std::vector<std::size_t>& lengths, Rng* rng) const {
  Var h = with_positions(x, lengths, rng);
  const ops::AttentionLayout self{lengths, lengths, shape_.heads, false};
  for (const Layer& l : enc_) {
    const Var a = l.ln_self(h);
    h = ops::add(h, maybe_dropout(attend(l.q, l.k, l.v, l.o, a, a, self), shape_.dropout, rng));
    h = ops::add(h, maybe_dropout(l.ff2(ops::gelu(l.ff1(l.ln_ff(h)))), shape_.dropout, rng));
  }
  return enc_ln_(h);
}

Var Seq2SeqCore::decode(const Var& y, const std::vector<std::size_t>& lengths, const Var& memory,
                        const std::vector<std::size_t>& memory_lengths, Rng* rng) const {
  Var h = with_positions(y, lengths, rng);
  const ops::AttentionLayout self{lengths, lengths, shape_.heads, true};
  const ops::AttentionLayout cross{lengths, memory_lengths, shape_.heads, false};
  for (const Layer& l : dec_) {
    const Var a = l.ln_self(h);
    h = ops::add(h, maybe_dropout(attend(l.q, l.k, l.v, l.o, a, a, self), shape_.dropout, rng));
    h = ops::add(h, maybe_dropout(attend(l.cq, l.ck, l.cv, l.co, l.ln_cross(h), memory, cross), shape_.dropout, rng));
    h = ops::add(h, maybe_dropout(l.ff2(ops::gelu(l.ff1(l.ln_ff(h)))), shape_.dropout, rng));
  }
  return dec_ln_(h);
}

}  // namespace svq
