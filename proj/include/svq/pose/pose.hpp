#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "svq/numerics/tensor.hpp"
#include "svq/pose/skeleton.hpp"

namespace svq {

// T x V x C keypoints stored row-major. T may be zero (e.g. an empty
// synthesis); most operations require at least one frame.
struct PoseSequence {
  std::string id;
  double fps = 25.0;
  std::size_t joints = 0;
  std::size_t channels = 2;
  std::vector<double> coords;

  std::size_t num_frames() const { return joints * channels == 0 ? 0 : coords.size() / (joints * channels); }
  std::size_t frame_size() const { return joints * channels; }
  double* frame(std::size_t t) { return coords.data() + t * frame_size(); }
  const double* frame(std::size_t t) const { return coords.data() + t * frame_size(); }
  double& at(std::size_t t, std::size_t v, std::size_t c) { return coords[(t * joints + v) * channels + c]; }
  double at(std::size_t t, std::size_t v, std::size_t c) const { return coords[(t * joints + v) * channels + c]; }

  // Frames [begin, end) as a new sequence with the same id and fps.
  PoseSequence slice(std::size_t begin, std::size_t end) const;
  Tensor to_tensor() const;  // [T, V, C]; requires T >= 1
};

PoseSequence make_pose(std::string id, std::size_t frames, std::size_t joints, std::size_t channels, double fps = 25.0);
PoseSequence pose_from_tensor(const Tensor& t, std::string id = {}, double fps = 25.0);

struct Sample {
  std::string text;
  PoseSequence pose;
};
using Corpus = std::vector<Sample>;

// Translates each frame so the shoulder midpoint is the origin and scales it
// so the shoulders are one unit apart. Frames whose shoulder distance is
// <= kMinShoulderDistance cannot be normalized; they are left untouched and
// reported through `degenerate`, or cause an exception if it is null.
inline constexpr double kMinShoulderDistance = 1e-6;
PoseSequence center_and_scale(const PoseSequence& seq, const SkeletonSpec& skel,
                              std::vector<bool>* degenerate = nullptr);

struct DiffStats {
  std::size_t frames = 0;       // T of the source sequence
  std::vector<double> x_diff;   // (T-1) x V x C
  std::vector<double> d;        // (T-1) x V
  std::vector<double> d_bar;    // T-1
};
DiffStats diff_stats(const PoseSequence& seq);

// mask[t+1] is set iff d_bar[t] > theta; frame 0 is never set.
std::vector<bool> noise_mask(const DiffStats& stats, double theta);
// 5 x median(d_bar); +inf when that is not positive (nothing to compare against).
double default_theta(const DiffStats& stats, double factor = 5.0);

// Keeps frames whose mask entry is false.
PoseSequence remove_frames(const PoseSequence& seq, const std::vector<bool>& mask);

// Per-axis affine map taking [lo, hi] to [-1, 1]; a constant axis maps to 0.
struct ScaleRecord {
  std::vector<double> lo;
  std::vector<double> hi;
};
PoseSequence minmax_normalize(const PoseSequence& seq, ScaleRecord* record = nullptr);
PoseSequence denormalize(const PoseSequence& seq, const ScaleRecord& record);

struct PreprocessOptions {
  // <= 0 selects default_theta with theta_factor.
  double theta = 0.0;
  double theta_factor = 5.0;
};
struct PreprocessResult {
  PoseSequence pose;
  ScaleRecord scale;
  double theta = 0.0;
  std::vector<std::size_t> kept;  // source frame index of every output frame
};
// center_and_scale, single-pass noise removal, then minmax_normalize.
// Throws std::invalid_argument when no frame would survive.
PreprocessResult preprocess(const PoseSequence& seq, const SkeletonSpec& skel, const PreprocessOptions& opts = {});

struct SignSegment {
  Tensor data;  // [L, V, C]
  std::string source_id;
  std::size_t index = 0;
};
// floor(T/L) consecutive windows from frame 0; the remainder is dropped.
std::vector<SignSegment> segment(const PoseSequence& seq, std::size_t L);

}  // namespace svq
