#include "svq/pose/pose.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace svq {

PoseSequence PoseSequence::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > num_frames()) {
    throw std::out_of_range("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                            std::to_string(num_frames()) + " frames");
  }
  PoseSequence out{id, fps, joints, channels, {}};
  out.coords.assign(coords.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()),
                    coords.begin() + static_cast<std::ptrdiff_t>(end * frame_size()));
  return out;
}

Tensor PoseSequence::to_tensor() const { return Tensor({num_frames(), joints, channels}, coords); }

PoseSequence make_pose(std::string id, std::size_t frames, std::size_t joints, std::size_t channels, double fps) {
  return PoseSequence{std::move(id), fps, joints, channels, std::vector<double>(frames * joints * channels, 0.0)};
}

PoseSequence pose_from_tensor(const Tensor& t, std::string id, double fps) {
  if (t.rank() != 3) throw ShapeError("pose tensor must be [T,V,C], got " + shape_str(t.shape()));
  return PoseSequence{std::move(id), fps, t.dim(1), t.dim(2), t.vec()};
}

PoseSequence center_and_scale(const PoseSequence& seq, const SkeletonSpec& skel, std::vector<bool>* degenerate) {
  if (seq.joints != skel.V) {
    throw ShapeError("pose has " + std::to_string(seq.joints) + " joints, skeleton has " + std::to_string(skel.V));
  }
  const std::size_t C = seq.channels;
  PoseSequence out = seq;
  if (degenerate) degenerate->assign(seq.num_frames(), false);
  for (std::size_t t = 0; t < seq.num_frames(); ++t) {
    const double* f = seq.frame(t);
    const double* ls = f + skel.left_shoulder * C;
    const double* rs = f + skel.right_shoulder * C;
    double dist2 = 0.0;
    for (std::size_t c = 0; c < C; ++c) dist2 += (ls[c] - rs[c]) * (ls[c] - rs[c]);
    const double dist = std::sqrt(dist2);
    if (!(dist > kMinShoulderDistance)) {
      if (!degenerate) throw std::invalid_argument("frame " + std::to_string(t) + ": shoulder distance " +
                                                   std::to_string(dist) + " too small to normalize");
      (*degenerate)[t] = true;
      continue;
    }
    double* o = out.frame(t);
    for (std::size_t v = 0; v < seq.joints; ++v) {
      for (std::size_t c = 0; c < C; ++c) {
        const double mid = 0.5 * (ls[c] + rs[c]);
        o[v * C + c] = (f[v * C + c] - mid) / dist;
      }
    }
  }
  return out;
}

DiffStats diff_stats(const PoseSequence& seq) {
  DiffStats s;
  s.frames = seq.num_frames();
  if (s.frames < 2) return s;
  const std::size_t V = seq.joints, C = seq.channels, n = s.frames - 1;
  s.x_diff.resize(n * V * C);
  s.d.resize(n * V);
  s.d_bar.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double* a = seq.frame(t);
    const double* b = seq.frame(t + 1);
    double total = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      double sq = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double dx = b[v * C + c] - a[v * C + c];
        s.x_diff[(t * V + v) * C + c] = dx;
        sq += dx * dx;
      }
      s.d[t * V + v] = std::sqrt(sq);
      total += s.d[t * V + v];
    }
    s.d_bar[t] = total / static_cast<double>(V);
  }
  return s;
}

std::vector<bool> noise_mask(const DiffStats& stats, double theta) {
  if (!(theta > 0.0)) throw std::invalid_argument("noise_mask: theta must be positive");
  std::vector<bool> mask(stats.frames, false);
  for (std::size_t t = 0; t < stats.d_bar.size(); ++t) mask[t + 1] = stats.d_bar[t] > theta;
  return mask;
}

double default_theta(const DiffStats& stats, double factor) {
  if (stats.d_bar.empty()) return std::numeric_limits<double>::infinity();
  std::vector<double> v = stats.d_bar;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double median = v[mid];
  if (v.size() % 2 == 0) {
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  const double theta = factor * median;
  return theta > 0.0 ? theta : std::numeric_limits<double>::infinity();
}

PoseSequence remove_frames(const PoseSequence& seq, const std::vector<bool>& mask) {
  if (mask.size() != seq.num_frames()) {
    throw ShapeError("mask has " + std::to_string(mask.size()) + " entries for " + std::to_string(seq.num_frames()) +
                     " frames");
  }
  PoseSequence out{seq.id, seq.fps, seq.joints, seq.channels, {}};
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) out.coords.insert(out.coords.end(), seq.frame(t), seq.frame(t) + seq.frame_size());
  }
  return out;
}

PoseSequence minmax_normalize(const PoseSequence& seq, ScaleRecord* record) {
  if (seq.num_frames() == 0) throw std::invalid_argument("minmax_normalize: empty sequence");
  const std::size_t C = seq.channels;
  ScaleRecord rec;
  rec.lo.assign(C, std::numeric_limits<double>::infinity());
  rec.hi.assign(C, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < seq.coords.size(); ++i) {
    rec.lo[i % C] = std::min(rec.lo[i % C], seq.coords[i]);
    rec.hi[i % C] = std::max(rec.hi[i % C], seq.coords[i]);
  }
  PoseSequence out = seq;
  for (std::size_t i = 0; i < out.coords.size(); ++i) {
    const std::size_t c = i % C;
    const double range = rec.hi[c] - rec.lo[c];
    out.coords[i] = range > 0.0 ? std::clamp(2.0 * (seq.coords[i] - rec.lo[c]) / range - 1.0, -1.0, 1.0) : 0.0;
  }
  if (record) *record = rec;
  return out;
}

PoseSequence denormalize(const PoseSequence& seq, const ScaleRecord& record) {
  const std::size_t C = seq.channels;
  if (record.lo.size() != C || record.hi.size() != C) throw ShapeError("scale record does not match channel count");
  PoseSequence out = seq;
  for (std::size_t i = 0; i < out.coords.size(); ++i) {
    const std::size_t c = i % C;
    const double range = record.hi[c] - record.lo[c];
    out.coords[i] = range > 0.0 ? record.lo[c] + 0.5 * (seq.coords[i] + 1.0) * range : record.lo[c];
  }
  return out;
}

PreprocessResult preprocess(const PoseSequence& seq, const SkeletonSpec& skel, const PreprocessOptions& opts) {
  if (seq.num_frames() == 0) throw std::invalid_argument("preprocess: sequence '" + seq.id + "' has no frames");
  std::vector<bool> degenerate;
  PoseSequence centered = center_and_scale(seq, skel, &degenerate);
  std::vector<std::size_t> index;
  for (std::size_t t = 0; t < degenerate.size(); ++t)
    if (!degenerate[t]) index.push_back(t);
  if (index.empty()) {
    throw std::invalid_argument("preprocess: sequence '" + seq.id + "' has no frame with usable shoulders");
  }
  centered = remove_frames(centered, degenerate);

  const DiffStats stats = diff_stats(centered);
  PreprocessResult r;
  r.theta = opts.theta > 0.0 ? opts.theta : default_theta(stats, opts.theta_factor);
  const std::vector<bool> mask = noise_mask(stats, r.theta);
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (!mask[t]) r.kept.push_back(index[t]);
  r.pose = minmax_normalize(remove_frames(centered, mask), &r.scale);
  return r;
}

std::vector<SignSegment> segment(const PoseSequence& seq, std::size_t L) {
  if (L == 0) throw std::invalid_argument("segment: window must be >= 1");
  std::vector<SignSegment> out;
  const std::size_t M = seq.num_frames() / L;
  const std::size_t fs = seq.frame_size();
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> data(seq.coords.begin() + static_cast<std::ptrdiff_t>(m * L * fs),
                             seq.coords.begin() + static_cast<std::ptrdiff_t>((m + 1) * L * fs));
    out.push_back({Tensor({L, seq.joints, seq.channels}, std::move(data)), seq.id, m});
  }
  return out;
}

}  // namespace svq
