#include "svq/pose/synth.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "svq/pose/skeleton.hpp"

namespace svq {

namespace {

constexpr const char* kWords[] = {"hello", "rain",  "tomorrow", "north",  "wind",  "sunny", "cold",   "evening",
                                  "cloud", "storm", "south",    "warm",   "snow",  "today", "night",  "weather",
                                  "east",  "west",  "morning",  "strong", "light", "fog",   "region", "coast"};

struct Xy {
  double x, y;
};

Xy pattern(int shape, double u) {
  constexpr double r = std::numbers::sqrt2 / 2.0;
  switch (shape) {
    case Primitive::circle: return {std::cos(u), std::sin(u)};
    case Primitive::horizontal: return {std::sin(u), 0.0};
    case Primitive::vertical: return {0.0, std::sin(u)};
    case Primitive::diagonal: return {r * std::sin(u), r * std::sin(u)};
    case Primitive::anti_diagonal: return {r * std::sin(u), -r * std::sin(u)};
    case Primitive::figure_eight: return {std::sin(u), 0.5 * std::sin(2.0 * u)};
  }
  throw std::invalid_argument("unknown primitive shape " + std::to_string(shape));
}

void move_arm(PoseSequence& p, std::size_t t, bool left, const Primitive& m, double env, double u) {
  using namespace joint13;
  const double side = left ? -1.0 : 1.0;  // mirrors x so "inward" points at the midline
  const Xy pat = pattern(m.shape, u);
  const double wx = side * env * (m.reach_x + m.amplitude * pat.x);
  const double wy = env * (m.reach_y + m.amplitude * pat.y);
  const double tx = side * env * -0.04 * pat.y, ty = env * 0.04 * pat.x;
  const std::size_t elb = left ? lelb : relb, wri = left ? lwri : rwri, hand = left ? lhand : rhand;
  p.at(t, elb, 0) += 0.5 * wx;
  p.at(t, elb, 1) += 0.5 * wy;
  p.at(t, wri, 0) += wx;
  p.at(t, wri, 1) += wy;
  p.at(t, hand, 0) += wx + tx;
  p.at(t, hand, 1) += wy + ty;
}

}  // namespace

std::vector<double> rest_pose13() {
  return {0.0,  0.55,  // head
          0.0,  0.05,  // neck
          -0.5, 0.0,   // rsho
          -0.38, -0.5, // relb
          -0.25, -0.85,
          -0.2, -0.97,
          0.5,  0.0,   // lsho
          0.38, -0.5,
          0.25, -0.85,
          0.2,  -0.97,
          -0.3, -1.2,  // rhip
          0.3,  -1.2,
          0.0,  -1.2};
}

PoseSequence render(const SynthRule& rule) {
  if (rule.duration == 0) throw std::invalid_argument("rule '" + rule.word + "' has zero duration");
  PoseSequence p = make_pose(rule.word, rule.duration, 13, 2);
  const std::vector<double> rest = rest_pose13();
  const double D = static_cast<double>(rule.duration);
  for (std::size_t t = 0; t < rule.duration; ++t) {
    std::copy(rest.begin(), rest.end(), p.frame(t));
    const double s = (static_cast<double>(t) + 0.5) / D;
    const double env = std::sin(std::numbers::pi * s);
    const double u = 2.0 * std::numbers::pi * rule.motion.cycles * s + rule.motion.phase;
    if (rule.motion.arm != Primitive::left) move_arm(p, t, false, rule.motion, env, u);
    if (rule.motion.arm != Primitive::right) move_arm(p, t, true, rule.motion, env, u);
  }
  return p;
}

double mean_frame_distance(const PoseSequence& a, const PoseSequence& b) {
  if (a.num_frames() != b.num_frames() || a.joints != b.joints || a.channels != b.channels || a.num_frames() == 0) {
    throw ShapeError("mean_frame_distance: clips differ in shape or are empty");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < a.num_frames(); ++t) {
    for (std::size_t v = 0; v < a.joints; ++v) {
      double sq = 0.0;
      for (std::size_t c = 0; c < a.channels; ++c) sq += std::pow(a.at(t, v, c) - b.at(t, v, c), 2);
      total += std::sqrt(sq);
    }
  }
  return total / static_cast<double>(a.num_frames() * a.joints);
}

std::vector<SynthRule> make_rules(std::size_t n_words, std::size_t window, std::uint64_t seed, double separation) {
  if (n_words < 2) throw std::invalid_argument("make_rules: need at least 2 words");
  if (n_words > std::size(kWords)) throw std::invalid_argument("make_rules: at most " + std::to_string(std::size(kWords)) + " words");
  if (window == 0) throw std::invalid_argument("make_rules: window must be positive");
  Rng rng(seed);
  std::vector<SynthRule> rules;
  std::vector<PoseSequence> pieces;
  for (std::size_t attempt = 0; rules.size() < n_words; ++attempt) {
    if (attempt > 10000) throw std::runtime_error("make_rules: could not find separated primitives");
    SynthRule r;
    r.word = kWords[rules.size()];
    r.duration = rng.uniform() < 0.4 ? 2 * window : window;
    Primitive& m = r.motion;
    m.arm = static_cast<int>(rng.below(3));
    m.shape = static_cast<int>(rng.below(Primitive::num_shapes));
    m.amplitude = 0.08 + 0.1 * rng.uniform();
    m.cycles = static_cast<double>(1 + rng.below(r.duration == window ? 2 : 3));
    m.phase = 2.0 * std::numbers::pi * rng.uniform();
    m.reach_x = 0.05 + 0.15 * rng.uniform();
    m.reach_y = 0.3 + 0.3 * rng.uniform();
    const PoseSequence clip = render(r);
    std::vector<PoseSequence> mine;
    for (std::size_t s = 0; s + window <= r.duration; s += window) mine.push_back(clip.slice(s, s + window));
    bool ok = true;
    for (std::size_t i = 0; i < mine.size() && ok; ++i) {
      for (const auto& other : pieces) ok = ok && mean_frame_distance(mine[i], other) > separation;
      for (std::size_t j = i + 1; j < mine.size(); ++j) ok = ok && mean_frame_distance(mine[i], mine[j]) > separation;
    }
    if (!ok) continue;
    pieces.insert(pieces.end(), mine.begin(), mine.end());
    rules.push_back(r);
  }
  return rules;
}

Corpus synth_corpus(const std::vector<SynthRule>& rules, const SynthOptions& opts) {
  if (rules.empty()) throw std::invalid_argument("synth_corpus: empty rule set");
  if (opts.max_words == 0) throw std::invalid_argument("synth_corpus: max_words must be >= 1");
  std::vector<PoseSequence> clips;
  for (const auto& r : rules) clips.push_back(render(r));
  const Rng base(opts.seed);
  using namespace joint13;
  Corpus corpus;
  corpus.reserve(opts.n_sentences);
  for (std::size_t i = 0; i < opts.n_sentences; ++i) {
    Rng rng = base.split(i);
    const std::size_t n = 1 + rng.below(opts.max_words);
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", i);
    s.pose = make_pose(id, 0, 13, 2, opts.fps);
    for (std::size_t w = 0; w < n; ++w) {
      const std::size_t k = rng.below(rules.size());
      if (w) s.text += ' ';
      s.text += rules[k].word;
      s.pose.coords.insert(s.pose.coords.end(), clips[k].coords.begin(), clips[k].coords.end());
    }
    if (opts.jitter > 0.0) {
      for (std::size_t t = 0; t < s.pose.num_frames(); ++t) {
        for (std::size_t v = 0; v < 13; ++v) {
          // Shoulders are the reference frame; their noise would show up as
          // per-frame rescaling rather than joint noise.
          if (v == rsho || v == lsho) continue;
          for (std::size_t c = 0; c < 2; ++c) s.pose.at(t, v, c) += opts.jitter * rng.normal();
        }
      }
    }
    if (opts.placement) {
      const double scale = 80.0 + 80.0 * rng.uniform();
      const double ox = 200.0 + 240.0 * rng.uniform(), oy = 150.0 + 180.0 * rng.uniform();
      for (std::size_t j = 0; j < s.pose.coords.size(); ++j) {
        s.pose.coords[j] = s.pose.coords[j] * scale + (j % 2 == 0 ? ox : oy);
      }
    }
    corpus.push_back(std::move(s));
  }
  return corpus;
}

Split split_of(const std::string& id, std::uint64_t seed) {
  const std::uint64_t h = hash_string(seed, id.data(), id.size()) % 10;
  return h < 8 ? Split::train : (h == 8 ? Split::dev : Split::test);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::string recover_text(const PoseSequence& centered, const std::vector<SynthRule>& rules) {
  std::vector<PoseSequence> clips;
  for (const auto& r : rules) clips.push_back(render(r));
  std::string text;
  std::size_t pos = 0;
  while (pos < centered.num_frames()) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = rules.size();
    for (std::size_t k = 0; k < rules.size(); ++k) {
      if (pos + rules[k].duration > centered.num_frames()) continue;
      const double d = mean_frame_distance(centered.slice(pos, pos + rules[k].duration), clips[k]);
      if (d < best) {
        best = d;
        pick = k;
      }
    }
    if (pick == rules.size()) throw std::invalid_argument("recover_text: trailing frames match no rule");
    if (!text.empty()) text += ' ';
    text += rules[pick].word;
    pos += rules[pick].duration;
  }
  return text;
}

}  // namespace svq
