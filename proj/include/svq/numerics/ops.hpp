#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "svq/numerics/autograd.hpp"
#include "svq/numerics/rng.hpp"

// Differentiable ops. 2-D operands are [rows, cols] row-major; "rows" ops act
// on each row independently.
namespace svq::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a + c where c is a constant (no gradient flows into c).
Var add_const(const Var& a, const Tensor& c);
// x[N,C] + b[C]
Var add_row(const Var& x, const Var& b);

Var matmul(const Var& a, const Var& b);

Var relu(const Var& x);
Var gelu(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
// x log x with 0 log 0 = 0; x must be nonnegative.
Var xlogx(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
// [N,C] -> [1,C]
Var mean_rows(const Var& x);

Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormStats {
  Tensor& running_mean;
  Tensor& running_var;
};
// Normalizes each column over all rows. In training mode batch statistics are
// used and the running statistics updated; otherwise running stats are used.
Var batch_norm_rows(const Var& x, const Var& gamma, const Var& beta, BatchNormStats stats, bool training,
                    double momentum = 0.1, double eps = 1e-5);

Var reshape(const Var& x, Shape shape);

// out[r, s*C:(s+1)*C] = x[src[r*slots+s], :], or zeros where src is -1.
struct IndexTable {
  std::size_t rows = 0;
  std::size_t slots = 0;
  std::vector<std::ptrdiff_t> src;
};
Var gather_rows(const Var& x, const IndexTable& table);

// Sparse linear map over rows in CSR form: out[r] = sum_k weight[k] * x[src[k]]
// for k in [offsets[r], offsets[r+1]).
struct MixTable {
  std::size_t in_rows = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> src;
  std::vector<double> weight;

  std::size_t out_rows() const { return offsets.size() - 1; }
  void add(std::size_t s, double w) {
    src.push_back(s);
    weight.push_back(w);
  }
  void end_row() { offsets.push_back(src.size()); }
};
Var mix_rows(const Var& x, const MixTable& table);

Var select_rows(const Var& x, std::span<const std::size_t> rows);
Var embedding(const Var& table, std::span<const int> ids);

// Multi-head scaled dot-product attention over packed variable-length
// sequences: batch item b owns q_lengths[b] consecutive rows of q and
// kv_lengths[b] consecutive rows of k and v.
struct AttentionLayout {
  std::vector<std::size_t> q_lengths;
  std::vector<std::size_t> kv_lengths;
  std::size_t heads = 1;
  bool causal = false;
};
Var attention(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout);

// Mean over rows whose target is not ignore_index of -log softmax(logits)[target].
Var cross_entropy_rows(const Var& logits, std::span<const int> targets, int ignore_index = -1);

// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, Rng& rng);

}  // namespace svq::ops
