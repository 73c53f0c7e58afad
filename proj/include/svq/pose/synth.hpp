#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svq/numerics/rng.hpp"
#include "svq/pose/pose.hpp"

// Synthetic paired corpus on the 13-joint upper-body skeleton. Every word is
// a hand/arm gesture that starts and ends near the rest pose; sentences
// concatenate their words' gestures.
namespace svq {

struct Primitive {
  enum Arm { right = 0, left = 1, both = 2 };
  enum Shape { circle = 0, horizontal, vertical, diagonal, anti_diagonal, figure_eight, num_shapes };
  int arm = right;
  int shape = circle;
  double amplitude = 0.1;
  double cycles = 1.0;
  double phase = 0.0;
  double reach_x = 0.1;  // toward the body midline
  double reach_y = 0.4;  // upward
};

struct SynthRule {
  std::string word;
  Primitive motion;
  std::size_t duration = 0;  // frames
};

// Canonical frame: shoulders at (-0.5, 0) and (0.5, 0), y up.
std::vector<double> rest_pose13();
// duration x 13 x 2 trajectory in canonical coordinates.
PoseSequence render(const SynthRule& rule);

// Mean over frames of the mean per-joint distance between equal-length clips.
double mean_frame_distance(const PoseSequence& a, const PoseSequence& b);

// Draws n_words rules with durations window or 2*window. Every window-sized
// piece of every rule differs from every other by more than `separation`
// in mean_frame_distance.
inline constexpr double kRuleSeparation = 0.05;
std::vector<SynthRule> make_rules(std::size_t n_words, std::size_t window, std::uint64_t seed,
                                  double separation = kRuleSeparation);

struct SynthOptions {
  std::size_t n_sentences = 800;
  std::size_t max_words = 6;
  double jitter = 0.01;  // per-joint Gaussian noise in shoulder widths
  // Random per-sequence scale and offset into pixel-like coordinates.
  bool placement = true;
  double fps = 25.0;
  std::uint64_t seed = 0;
};
Corpus synth_corpus(const std::vector<SynthRule>& rules, const SynthOptions& opts);

enum class Split { train, dev, test };
// 80/10/10 by a seeded hash of the id.
Split split_of(const std::string& id, std::uint64_t seed);
const char* split_name(Split s);

// Reads the word sequence back out of a centered (center_and_scale) synthetic
// pose by nearest-rule matching, greedily from frame 0.
std::string recover_text(const PoseSequence& centered, const std::vector<SynthRule>& rules);

}  // namespace svq
