#include "svq/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace svq::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank2(const Var& a, const char* op) {
  if (a.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a 2-D operand, got " + shape_str(a.shape()));
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

// g += s * src
void accumulate(Node& p, const Tensor& src, double s = 1.0) {
  if (!p.requires_grad) return;
  Tensor& g = p.grad_buffer();
  double* gd = g.ptr();
  const double* sd = src.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) gd[i] += s * sd[i];
}

// Gradients of y = xhat * gamma + beta with respect to gamma and beta.
void affine_grads(const Node& n, Node& pg, Node& pb, const Tensor& xhat, std::size_t rows, std::size_t cols) {
  if (pg.requires_grad) {
    Tensor& gg = pg.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gg[c] += n.grad[r * cols + c] * xhat[r * cols + c];
  }
  if (pb.requires_grad) {
    Tensor& gb = pb.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gb[c] += n.grad[r * cols + c];
  }
}

void track_kinks(const Tensor& x) {
  if (!kink_tracking()) return;
  std::uint64_t h = 0x84222325CBF29CE4ull;
  for (std::size_t i = 0; i < x.size(); ++i) {
    h = (h ^ (x[i] > 0.0 ? 1u : 0u)) * 0x100000001B3ull;
  }
  mix_kink_signature(h);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op_result(std::move(out), "add", {a, b}, [](Node& n) {
    accumulate(parent(n, 0), n.grad);
    accumulate(parent(n, 1), n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op_result(std::move(out), "sub", {a, b}, [](Node& n) {
    accumulate(parent(n, 0), n.grad);
    accumulate(parent(n, 1), n.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op_result(std::move(out), "mul", {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op_result(std::move(out), "scale", {a}, [s](Node& n) { accumulate(parent(n, 0), n.grad, s); });
}

Var add_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) {
    throw ShapeError("add_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return make_op_result(std::move(out), "add_const", {a}, [](Node& n) { accumulate(parent(n, 0), n.grad); });
}

Var add_row(const Var& x, const Var& b) {
  require_rank2(x, "add_row");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (b.size() != cols) {
    throw ShapeError("add_row: bias " + shape_str(b.shape()) + " does not match columns of " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b.value()[c];
  return make_op_result(std::move(out), "add_row", {x, b}, [rows, cols](Node& n) {
    accumulate(parent(n, 0), n.grad);
    Node& pb = parent(n, 1);
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += n.grad[r * cols + c];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, nn});
  MatMap(out.ptr(), m, nn).noalias() = CMatMap(a.value().ptr(), m, k) * CMatMap(b.value().ptr(), k, nn);
  return make_op_result(std::move(out), "matmul", {a, b}, [m, k, nn](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    CMatMap dc(n.grad.ptr(), m, nn);
    if (pa.requires_grad) {
      MatMap(pa.grad_buffer().ptr(), m, k).noalias() += dc * CMatMap(pb.value.ptr(), k, nn).transpose();
    }
    if (pb.requires_grad) {
      MatMap(pb.grad_buffer().ptr(), k, nn).noalias() += CMatMap(pa.value.ptr(), m, k).transpose() * dc;
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  track_kinks(x.value());
  return make_op_result(std::move(out), "relu", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (px.value[i] > 0.0) g[i] += n.grad[i];
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
  return make_op_result(std::move(out), "gelu", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Var exp(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  return make_op_result(std::move(out), "exp", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

Var log(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::log(v);
  return make_op_result(std::move(out), "log", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / px.value[i];
  });
}

Var xlogx(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    if (v < 0.0) throw NumericError("xlogx: negative input " + std::to_string(v));
    v = v > 0.0 ? v * std::log(v) : 0.0;
  }
  return make_op_result(std::move(out), "xlogx", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    // d/dx x log x = log x + 1; finite stand-in at exactly 0
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (std::log(std::max(px.value[i], 1e-300)) + 1.0);
  });
}

Var square(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v * v;
  return make_op_result(std::move(out), "square", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * n.grad[i] * px.value[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op_result(Tensor::scalar(s), "sum", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    const double d = n.grad[0];
    for (auto& v : g.data()) v += d;
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op_result(Tensor::scalar(s * inv), "mean", {x}, [inv](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    const double d = n.grad[0] * inv;
    for (auto& v : g.data()) v += d;
  });
}

Var mean_rows(const Var& x) {
  require_rank2(x, "mean_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += x.value()[r * cols + c];
  const double inv = 1.0 / static_cast<double>(rows);
  for (auto& v : out.data()) v *= inv;
  return make_op_result(std::move(out), "mean_rows", {x}, [rows, cols, inv](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += n.grad[c] * inv;
  });
}

Var softmax_rows(const Var& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  return make_op_result(std::move(out), "softmax_rows", {x}, [rows, cols](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.value.ptr() + r * cols;
      const double* dy = n.grad.ptr() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  require_rank2(x, "log_softmax_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) row[c] -= lz;
  }
  return make_op_result(std::move(out), "log_softmax_rows", {x}, [rows, cols](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.value.ptr() + r * cols;
      const double* dy = n.grad.ptr() + r * cols;
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += dy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += dy[c] - std::exp(y[c]) * s;
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank2(x, "layer_norm_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (gamma.size() != cols || beta.size() != cols) {
    throw ShapeError("layer_norm_rows: affine params " + shape_str(gamma.shape()) + " do not match " +
                     shape_str(x.shape()));
  }
  Tensor xhat({rows, cols});
  std::vector<double> inv_std(rows);
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * cols;
    // Shifted by the first entry so constant rows give an exact mean.
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c] - xr[0];
    mu = xr[0] + mu / static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mu) * inv_std[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_op_result(std::move(out), "layer_norm_rows", {x, gamma, beta},
                        [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                          Node& px = parent(n, 0);
                          Node& pg = parent(n, 1);
                          Node& pb = parent(n, 2);
                          affine_grads(n, pg, pb, xhat, rows, cols);
                          if (!px.requires_grad) return;
                          Tensor& g = px.grad_buffer();
                          std::vector<double> dxh(cols);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) {
                              dxh[c] = n.grad[r * cols + c] * pg.value[c];
                              m1 += dxh[c];
                              m2 += dxh[c] * xhat[r * cols + c];
                            }
                            m1 /= static_cast<double>(cols);
                            m2 /= static_cast<double>(cols);
                            for (std::size_t c = 0; c < cols; ++c) {
                              g[r * cols + c] += inv_std[r] * (dxh[c] - m1 - xhat[r * cols + c] * m2);
                            }
                          }
                        });
}

Var batch_norm_rows(const Var& x, const Var& gamma, const Var& beta, BatchNormStats stats, bool training,
                    double momentum, double eps) {
  require_rank2(x, "batch_norm_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (gamma.size() != cols || beta.size() != cols || stats.running_mean.size() != cols ||
      stats.running_var.size() != cols) {
    throw ShapeError("batch_norm_rows: parameters do not match " + shape_str(x.shape()));
  }
  std::vector<double> mu(cols, 0.0), inv_std(cols, 0.0);
  if (training) {
    std::vector<double> var(cols, 0.0);
    const double* x0 = x.value().ptr();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mu[c] += x.value()[r * cols + c] - x0[c];
    for (std::size_t c = 0; c < cols; ++c) mu[c] = x0[c] + mu[c] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = x.value()[r * cols + c] - mu[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < cols; ++c) {
      var[c] /= static_cast<double>(rows);
      inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
      const double unbiased = rows > 1 ? var[c] * static_cast<double>(rows) / static_cast<double>(rows - 1) : var[c];
      stats.running_mean[c] = (1.0 - momentum) * stats.running_mean[c] + momentum * mu[c];
      stats.running_var[c] = (1.0 - momentum) * stats.running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < cols; ++c) {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
    }
  }
  Tensor xhat({rows, cols});
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (x.value()[r * cols + c] - mu[c]) * inv_std[c];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gamma.value()[c] + beta.value()[c];
    }
  return make_op_result(
      std::move(out), "batch_norm_rows", {x, gamma, beta},
      [rows, cols, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
        Node& px = parent(n, 0);
        Node& pg = parent(n, 1);
        Node& pb = parent(n, 2);
        affine_grads(n, pg, pb, xhat, rows, cols);
        if (!px.requires_grad) return;
        Tensor& g = px.grad_buffer();
        if (!training) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += n.grad[r * cols + c] * pg.value[c] * inv_std[c];
          return;
        }
        std::vector<double> m1(cols, 0.0), m2(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const double d = n.grad[r * cols + c] * pg.value[c];
            m1[c] += d;
            m2[c] += d * xhat[r * cols + c];
          }
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const double d = n.grad[r * cols + c] * pg.value[c];
            g[r * cols + c] += inv_std[c] * (d - m1[c] * inv_n - xhat[r * cols + c] * m2[c] * inv_n);
          }
      });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op_result(std::move(out), "reshape", {x}, [](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var gather_rows(const Var& x, const IndexTable& table) {
  require_rank2(x, "gather_rows");
  const std::size_t in_rows = x.shape()[0], cols = x.shape()[1];
  if (table.src.size() != table.rows * table.slots || table.rows == 0 || table.slots == 0) {
    throw ShapeError("gather_rows: malformed index table");
  }
  for (auto s : table.src) {
    if (s >= static_cast<std::ptrdiff_t>(in_rows)) {
      throw ShapeError("gather_rows: index " + std::to_string(s) + " out of range for " + shape_str(x.shape()));
    }
  }
  const std::size_t width = table.slots * cols;
  Tensor out({table.rows, width});
  for (std::size_t r = 0; r < table.rows; ++r)
    for (std::size_t s = 0; s < table.slots; ++s) {
      const auto src = table.src[r * table.slots + s];
      if (src < 0) continue;
      std::copy_n(x.value().ptr() + static_cast<std::size_t>(src) * cols, cols, out.ptr() + r * width + s * cols);
    }
  return make_op_result(std::move(out), "gather_rows", {x}, [table, cols, width](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t r = 0; r < table.rows; ++r)
      for (std::size_t s = 0; s < table.slots; ++s) {
        const auto src = table.src[r * table.slots + s];
        if (src < 0) continue;
        double* dst = g.ptr() + static_cast<std::size_t>(src) * cols;
        const double* from = n.grad.ptr() + r * width + s * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += from[c];
      }
  });
}

Var mix_rows(const Var& x, const MixTable& table) {
  require_rank2(x, "mix_rows");
  const std::size_t cols = x.shape()[1];
  if (table.in_rows != x.shape()[0]) {
    throw ShapeError("mix_rows: table expects " + std::to_string(table.in_rows) + " input rows, got " +
                     shape_str(x.shape()));
  }
  const std::size_t out_rows = table.out_rows();
  if (out_rows == 0) throw ShapeError("mix_rows: empty table");
  Tensor out({out_rows, cols});
  for (std::size_t r = 0; r < out_rows; ++r) {
    double* o = out.ptr() + r * cols;
    for (std::size_t k = table.offsets[r]; k < table.offsets[r + 1]; ++k) {
      const double* in = x.value().ptr() + table.src[k] * cols;
      const double w = table.weight[k];
      for (std::size_t c = 0; c < cols; ++c) o[c] += w * in[c];
    }
  }
  return make_op_result(std::move(out), "mix_rows", {x}, [table, cols](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t r = 0; r < table.out_rows(); ++r) {
      const double* d = n.grad.ptr() + r * cols;
      for (std::size_t k = table.offsets[r]; k < table.offsets[r + 1]; ++k) {
        double* dst = g.ptr() + table.src[k] * cols;
        const double w = table.weight[k];
        for (std::size_t c = 0; c < cols; ++c) dst[c] += w * d[c];
      }
    }
  });
}

Var select_rows(const Var& x, std::span<const std::size_t> rows) {
  IndexTable t;
  t.rows = rows.size();
  t.slots = 1;
  t.src.assign(rows.begin(), rows.end());
  return gather_rows(x, t);
}

Var embedding(const Var& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(id) + " out of range for table " + shape_str(table.shape()));
    }
  }
  Tensor out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().ptr() + static_cast<std::size_t>(ids[i]) * dim, dim, out.ptr() + i * dim);
  return make_op_result(std::move(out), "embedding", {table},
                        [idv = std::vector<int>(ids.begin(), ids.end()), dim](Node& n) {
                          Node& pt = parent(n, 0);
                          if (!pt.requires_grad) return;
                          Tensor& g = pt.grad_buffer();
                          for (std::size_t i = 0; i < idv.size(); ++i) {
                            double* dst = g.ptr() + static_cast<std::size_t>(idv[i]) * dim;
                            const double* from = n.grad.ptr() + i * dim;
                            for (std::size_t c = 0; c < dim; ++c) dst[c] += from[c];
                          }
                        });
}

Var attention(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const std::size_t d = q.shape()[1];
  if (k.shape()[1] != d || v.shape()[1] != d || k.shape()[0] != v.shape()[0]) {
    throw ShapeError("attention: incompatible q/k/v " + shape_str(q.shape()) + " " + shape_str(k.shape()) + " " +
                     shape_str(v.shape()));
  }
  if (layout.heads == 0 || d % layout.heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by heads");
  }
  if (layout.q_lengths.size() != layout.kv_lengths.size()) throw ShapeError("attention: layout batch mismatch");
  std::size_t qn = 0, kn = 0;
  for (std::size_t b = 0; b < layout.q_lengths.size(); ++b) {
    if (layout.q_lengths[b] == 0 || layout.kv_lengths[b] == 0) throw ShapeError("attention: empty sequence");
    if (layout.causal && layout.q_lengths[b] != layout.kv_lengths[b]) {
      throw ShapeError("attention: causal layout needs equal query/key lengths");
    }
    qn += layout.q_lengths[b];
    kn += layout.kv_lengths[b];
  }
  if (qn != q.shape()[0] || kn != k.shape()[0]) {
    throw ShapeError("attention: layout covers " + std::to_string(qn) + "/" + std::to_string(kn) + " rows, got " +
                     shape_str(q.shape()) + "/" + shape_str(k.shape()));
  }
  const std::size_t heads = layout.heads, dk = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out({qn, d});
  std::vector<RowMat> probs;
  probs.reserve(layout.q_lengths.size() * heads);
  std::size_t qo = 0, ko = 0;
  for (std::size_t b = 0; b < layout.q_lengths.size(); ++b) {
    const std::size_t lq = layout.q_lengths[b], lk = layout.kv_lengths[b];
    for (std::size_t h = 0; h < heads; ++h) {
      CStridedMap qm(q.value().ptr() + qo * d + h * dk, lq, dk, Eigen::OuterStride<>(d));
      CStridedMap km(k.value().ptr() + ko * d + h * dk, lk, dk, Eigen::OuterStride<>(d));
      CStridedMap vm(v.value().ptr() + ko * d + h * dk, lk, dk, Eigen::OuterStride<>(d));
      RowMat s = (qm * km.transpose()) * sc;
      for (std::size_t i = 0; i < lq; ++i) {
        const std::size_t lim = layout.causal ? i + 1 : lk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          s(i, j) = j < lim ? std::exp(s(i, j) - mx) : 0.0;
          z += s(i, j);
        }
        for (std::size_t j = 0; j < lim; ++j) s(i, j) /= z;
      }
      StridedMap om(out.ptr() + qo * d + h * dk, lq, dk, Eigen::OuterStride<>(d));
      om.noalias() = s * vm;
      probs.push_back(std::move(s));
    }
    qo += lq;
    ko += lk;
  }
  return make_op_result(std::move(out), "attention", {q, k, v},
                        [layout, d, dk, sc, probs = std::move(probs)](Node& n) {
                          Node& pq = parent(n, 0);
                          Node& pk = parent(n, 1);
                          Node& pv = parent(n, 2);
                          double* gq = pq.requires_grad ? pq.grad_buffer().ptr() : nullptr;
                          double* gk = pk.requires_grad ? pk.grad_buffer().ptr() : nullptr;
                          double* gv = pv.requires_grad ? pv.grad_buffer().ptr() : nullptr;
                          const std::size_t heads = layout.heads;
                          std::size_t qo = 0, ko = 0, idx = 0;
                          for (std::size_t b = 0; b < layout.q_lengths.size(); ++b) {
                            const std::size_t lq = layout.q_lengths[b], lk = layout.kv_lengths[b];
                            for (std::size_t h = 0; h < heads; ++h, ++idx) {
                              const RowMat& p = probs[idx];
                              const Eigen::OuterStride<> st(d);
                              CStridedMap dout(n.grad.ptr() + qo * d + h * dk, lq, dk, st);
                              CStridedMap qm(pq.value.ptr() + qo * d + h * dk, lq, dk, st);
                              CStridedMap km(pk.value.ptr() + ko * d + h * dk, lk, dk, st);
                              CStridedMap vm(pv.value.ptr() + ko * d + h * dk, lk, dk, st);
                              if (gv) StridedMap(gv + ko * d + h * dk, lk, dk, st).noalias() += p.transpose() * dout;
                              if (!gq && !gk) continue;
                              RowMat dp = dout * vm.transpose();
                              RowMat ds(lq, lk);
                              for (std::size_t i = 0; i < lq; ++i) {
                                double dot = 0.0;
                                for (std::size_t j = 0; j < lk; ++j) dot += dp(i, j) * p(i, j);
                                for (std::size_t j = 0; j < lk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * sc;
                              }
                              if (gq) StridedMap(gq + qo * d + h * dk, lq, dk, st).noalias() += ds * km;
                              if (gk) StridedMap(gk + ko * d + h * dk, lk, dk, st).noalias() += ds.transpose() * qm;
                            }
                            qo += lq;
                            ko += lk;
                          }
                        });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> targets, int ignore_index) {
  require_rank2(logits, "cross_entropy_rows");
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw ShapeError("cross_entropy_rows: target id " + std::to_string(t) + " out of range [0, " +
                       std::to_string(cols) + ")");
    }
    ++count;
  }
  if (count == 0) throw ShapeError("cross_entropy_rows: every target is ignored");
  Tensor prob({rows, cols});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.value().ptr() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) prob[r * cols + c] = std::exp(x[c] - lz);
    if (targets[r] != ignore_index) loss -= x[targets[r]] - lz;
  }
  const double inv = 1.0 / static_cast<double>(count);
  return make_op_result(Tensor::scalar(loss * inv), "cross_entropy_rows", {logits},
                        [rows, cols, inv, ignore_index, prob = std::move(prob),
                         tg = std::vector<int>(targets.begin(), targets.end())](Node& n) {
                          Node& px = parent(n, 0);
                          if (!px.requires_grad) return;
                          Tensor& g = px.grad_buffer();
                          const double d = n.grad[0] * inv;
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (tg[r] == ignore_index) continue;
                            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += d * prob[r * cols + c];
                            g[r * cols + static_cast<std::size_t>(tg[r])] -= d;
                          }
                        });
}

Var dropout(const Var& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  Tensor mask(x.shape());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op_result(std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& n) {
    Node& px = parent(n, 0);
    if (!px.requires_grad) return;
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

}  // namespace svq::ops
