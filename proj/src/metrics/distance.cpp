#include "svq/metrics/distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "svq/numerics/tensor.hpp"

namespace svq {

namespace {

void check_compatible(const PoseSequence& a, const PoseSequence& b, const char* what) {
  if (a.joints != b.joints || a.channels != b.channels) {
    throw ShapeError(std::string(what) + ": joint layouts differ (" + std::to_string(a.joints) + "x" +
                     std::to_string(a.channels) + " vs " + std::to_string(b.joints) + "x" +
                     std::to_string(b.channels) + ")");
  }
  if (a.joints == 0 || a.channels == 0) throw ShapeError(std::string(what) + ": sequences have no joints");
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10) throw NumericError(std::string(what) + ": covariance is not positive semidefinite");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_stats(const GaussianStats& s, const char* side) {
  const auto d = s.mean.size();
  if (s.cov.rows() != d || s.cov.cols() != d) throw ShapeError(std::string("frechet_distance: ") + side + " covariance shape");
  if ((s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw NumericError(std::string("frechet_distance: ") + side + " covariance is not symmetric");
  }
}

}  // namespace

double frame_cost(const PoseSequence& a, std::size_t i, const PoseSequence& b, std::size_t j) {
  const double* fa = a.frame(i);
  const double* fb = b.frame(j);
  const std::size_t C = a.channels;
  double total = 0.0;
  for (std::size_t v = 0; v < a.joints; ++v) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = fa[v * C + c] - fb[v * C + c];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(a.joints);
}

double mje(const PoseSequence& a, const PoseSequence& b) {
  check_compatible(a, b, "mje");
  if (a.num_frames() != b.num_frames()) {
    throw ShapeError("mje: frame counts differ (" + std::to_string(a.num_frames()) + " vs " +
                     std::to_string(b.num_frames()) + ")");
  }
  if (a.num_frames() == 0) throw ShapeError("mje: empty sequences");
  double total = 0.0;
  for (std::size_t t = 0; t < a.num_frames(); ++t) total += frame_cost(a, t, b, t);
  return total / static_cast<double>(a.num_frames());
}

DtwResult dtw(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("dtw: empty sequence");
  if (cost.size() != rows * cols) throw ShapeError("dtw: cost matrix size does not match its extents");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(rows * cols, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * cols + j]; };
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = best + cost[i * cols + j];
    }

  DtwResult out;
  out.cost = at(rows - 1, cols - 1);
  std::size_t i = rows - 1, j = cols - 1;
  out.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    // smallest predecessor; strict comparisons keep the diagonal, then (1,0)
    double best = inf;
    int step = -1;
    if (i > 0 && j > 0) best = at(i - 1, j - 1), step = 0;
    if (i > 0 && at(i - 1, j) < best) best = at(i - 1, j), step = 1;
    if (j > 0 && at(i, j - 1) < best) best = at(i, j - 1), step = 2;
    if (step == 0) --i, --j;
    else if (step == 1) --i;
    else --j;
    out.path.emplace_back(i, j);
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

DtwResult dtw(const PoseSequence& a, const PoseSequence& b) {
  check_compatible(a, b, "dtw");
  const std::size_t T1 = a.num_frames(), T2 = b.num_frames();
  if (T1 == 0 || T2 == 0) throw std::invalid_argument("dtw: empty sequence");
  std::vector<double> cost(T1 * T2);
  for (std::size_t i = 0; i < T1; ++i)
    for (std::size_t j = 0; j < T2; ++j) cost[i * T2 + j] = frame_cost(a, i, b, j);
  return dtw(cost, T1, T2);
}

double dtw_mje(const PoseSequence& generated, const PoseSequence& reference) {
  const DtwResult r = dtw(generated, reference);
  return r.cost / static_cast<double>(r.path.size());
}

bool valid_path(const AlignmentPath& path, std::size_t rows, std::size_t cols) {
  if (path.empty() || path.front() != std::pair<std::size_t, std::size_t>{0, 0}) return false;
  if (path.back() != std::pair<std::size_t, std::size_t>{rows - 1, cols - 1}) return false;
  for (std::size_t k = 1; k < path.size(); ++k) {
    const std::size_t di = path[k].first - path[k - 1].first, dj = path[k].second - path[k - 1].second;
    if (path[k].first < path[k - 1].first || path[k].second < path[k - 1].second) return false;
    if (di > 1 || dj > 1 || (di == 0 && dj == 0)) return false;
  }
  return true;
}

Embedder dvae_embedder(const StgpDvae& dvae) {
  return [&dvae](const PoseSequence& seq) {
    const std::size_t L = dvae.config().window;
    if (seq.num_frames() < L) {
      throw std::invalid_argument("embed: sequence '" + seq.id + "' has " + std::to_string(seq.num_frames()) +
                                  " frames, fewer than one window of " + std::to_string(L));
    }
    std::vector<Tensor> data;
    for (auto& s : segment(seq, L)) data.push_back(std::move(s.data));
    const Tensor f = dvae.features(data);
    const std::size_t n = f.dim(0), d = f.dim(1);
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) out[c] += f[r * d + c];
    for (double& v : out) v /= static_cast<double>(n);
    return out;
  };
}

GaussianStats fit_gaussian(std::span<const std::vector<double>> samples, double reg, std::vector<std::string>* warnings) {
  if (samples.size() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");
  const std::size_t d = samples[0].size();
  if (d == 0) throw ShapeError("fit_gaussian: zero-width features");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != d) throw ShapeError("fit_gaussian: feature widths differ");
    for (std::size_t c = 0; c < d; ++c) {
      if (!std::isfinite(samples[i][c])) throw NumericError("fit_gaussian: non-finite feature");
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = samples[i][c];
    }
  }
  GaussianStats s;
  s.count = samples.size();
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(s.count - 1);
  s.cov = (s.cov + s.cov.transpose()) * 0.5;
  s.cov.diagonal().array() += reg;
  if (warnings && s.count < d + 1) {
    warnings->push_back("only " + std::to_string(s.count) + " samples for " + std::to_string(d) +
                        "-dim features; covariance is mostly regularizer");
  }
  return s;
}

double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
  if (p.mean.size() != q.mean.size()) {
    throw ShapeError("frechet_distance: dimensions differ (" + std::to_string(p.mean.size()) + " vs " +
                     std::to_string(q.mean.size()) + ")");
  }
  check_stats(p, "first");
  check_stats(q, "second");
  const Eigen::MatrixXd sp = psd_sqrt(p.cov, "frechet_distance");
  psd_sqrt(q.cov, "frechet_distance");  // PSD check only
  Eigen::MatrixXd m = sp * q.cov * sp;
  m = (m + m.transpose()) * 0.5;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr_sqrt += std::sqrt(std::max(es.eigenvalues()[i], 0.0));
  const double d = (p.mean - q.mean).squaredNorm() + p.cov.trace() + q.cov.trace() - 2.0 * tr_sqrt;
  if (d < 0.0) {
    if (d >= -1e-8) return 0.0;
    throw NumericError("frechet_distance: negative result " + std::to_string(d));
  }
  return d;
}

FgdResult fgd_features(std::span<const std::vector<double>> real, std::span<const std::vector<double>> generated) {
  FgdResult r;
  std::vector<std::string> wr, wg;
  const GaussianStats p = fit_gaussian(real, 1e-6, &wr);
  const GaussianStats q = fit_gaussian(generated, 1e-6, &wg);
  for (auto& w : wr) r.warnings.push_back("real: " + w);
  for (auto& w : wg) r.warnings.push_back("generated: " + w);
  r.value = frechet_distance(p, q);
  return r;
}

FgdResult fgd(std::span<const PoseSequence> real, std::span<const PoseSequence> generated, const Embedder& embed) {
  std::vector<std::vector<double>> fr, fg;
  for (const auto& s : real) fr.push_back(embed(s));
  for (const auto& s : generated) fg.push_back(embed(s));
  return fgd_features(fr, fg);
}

}  // namespace svq
