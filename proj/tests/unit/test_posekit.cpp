#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "svq/pose/io.hpp"
#include "svq/pose/pose.hpp"
#include "svq/pose/synth.hpp"

using namespace svq;

namespace {

PoseSequence random_pose(std::size_t T, std::size_t V, std::size_t C, std::uint64_t seed) {
  Rng rng(seed);
  PoseSequence p = make_pose("r" + std::to_string(seed), T, V, C);
  for (double& x : p.coords) x = 4.0 * rng.uniform() - 2.0;
  return p;
}

double shoulder_distance(const PoseSequence& p, const SkeletonSpec& s, std::size_t t) {
  double sq = 0.0;
  for (std::size_t c = 0; c < p.channels; ++c) sq += std::pow(p.at(t, s.left_shoulder, c) - p.at(t, s.right_shoulder, c), 2);
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("skeleton: built-in spec, json round trip, validation") {
  const SkeletonSpec s = upper_body13();
  CHECK_NOTHROW(s.validate());
  CHECK(s.vertices_at(0) == 13);
  CHECK(s.vertices_at(1) == 5);
  CHECK(s.vertices_at(2) == 2);
  CHECK(s.vertices_at(3) == 1);
  // torso touches both arms, each arm touches its hand
  const auto e1 = s.edges_at(1);
  CHECK(e1.size() == 4);
  CHECK(s.edges_at(2).size() == 1);
  CHECK(s.edges_at(3).empty());

  const SkeletonSpec back = skeleton_from_json(skeleton_to_json(s));
  CHECK(back.V == s.V);
  CHECK(back.edges == s.edges);
  CHECK(back.pooling_levels == s.pooling_levels);

  SkeletonSpec bad = s;
  bad.pooling_levels[0][0].push_back(2);  // vertex 2 in two groups
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.edges.pop_back();  // lhip disconnected
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.edges.push_back({0, 13});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.pooling_levels[1] = {{0, 1}, {3, 4}};  // misses group 2
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("center_and_scale") {
  SkeletonSpec s;
  s.V = 3;
  s.edges = {{0, 1}, {1, 2}};
  s.right_shoulder = 0;
  s.left_shoulder = 1;

  SUBCASE("shoulders at +-2 land at +-0.5") {
    PoseSequence p = make_pose("a", 1, 3, 2);
    p.at(0, 0, 0) = -2.0;
    p.at(0, 1, 0) = 2.0;
    p.at(0, 2, 0) = 1.0;
    p.at(0, 2, 1) = 4.0;
    const PoseSequence c = center_and_scale(p, s);
    CHECK(c.at(0, 0, 0) == -0.5);
    CHECK(c.at(0, 0, 1) == 0.0);
    CHECK(c.at(0, 1, 0) == 0.5);
    CHECK(c.at(0, 2, 0) == 0.25);
    CHECK(c.at(0, 2, 1) == 1.0);
  }
  SUBCASE("random frames: unit shoulders, origin midpoint, idempotent") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const std::size_t C = seed % 2 ? 3 : 2;
      const PoseSequence p = random_pose(30, 3, C, seed);
      const PoseSequence c = center_and_scale(p, s);
      for (std::size_t t = 0; t < 30; ++t) {
        CHECK(std::abs(shoulder_distance(c, s, t) - 1.0) <= 1e-9);
        for (std::size_t k = 0; k < C; ++k) CHECK(std::abs(c.at(t, 0, k) + c.at(t, 1, k)) <= 1e-12);
      }
      const PoseSequence again = center_and_scale(c, s);
      for (std::size_t i = 0; i < c.coords.size(); ++i) CHECK(std::abs(again.coords[i] - c.coords[i]) <= 1e-12);
    }
  }
  SUBCASE("degenerate shoulders") {
    PoseSequence p = random_pose(4, 3, 2, 7);
    p.at(2, 1, 0) = p.at(2, 0, 0);
    p.at(2, 1, 1) = p.at(2, 0, 1);
    CHECK_THROWS_AS(center_and_scale(p, s), std::invalid_argument);
    std::vector<bool> flags;
    center_and_scale(p, s, &flags);
    CHECK(flags == std::vector<bool>{false, false, true, false});
  }
}

TEST_CASE("noise_mask") {
  SUBCASE("constant sequence keeps every frame") {
    PoseSequence p = make_pose("c", 6, 2, 2);
    for (double& x : p.coords) x = 0.7;
    const auto m = noise_mask(diff_stats(p), 1e-9);
    CHECK(m == std::vector<bool>(6, false));
  }
  SUBCASE("hand-computed spike") {
    // Frame 2 displaced by (3,4) on both joints: |delta| = 5, so
    // D_bar = [0, 5, 5, 0] and frames 2 and 3 are entered by transitions above theta.
    PoseSequence p = make_pose("s", 5, 2, 2);
    for (std::size_t v = 0; v < 2; ++v) {
      p.at(2, v, 0) = 3.0;
      p.at(2, v, 1) = 4.0;
    }
    const DiffStats st = diff_stats(p);
    REQUIRE(st.d_bar.size() == 4);
    CHECK(st.d_bar[0] == 0.0);
    CHECK(st.d_bar[1] == 5.0);
    CHECK(st.d_bar[2] == 5.0);
    CHECK(st.d_bar[3] == 0.0);
    CHECK(st.d[1 * 2 + 0] == 5.0);
    CHECK(st.x_diff[(1 * 2 + 1) * 2 + 1] == 4.0);
    CHECK(noise_mask(st, 1.0) == std::vector<bool>{false, false, true, true, false});
    CHECK(noise_mask(st, 5.0) == std::vector<bool>(5, false));
    CHECK(noise_mask(st, std::numeric_limits<double>::infinity()) == std::vector<bool>(5, false));
    // median of {0,0,5,5} is 2.5
    CHECK(default_theta(st) == 12.5);
  }
  SUBCASE("short sequences and bad theta") {
    const PoseSequence one = make_pose("o", 1, 2, 2);
    CHECK(noise_mask(diff_stats(one), 1.0) == std::vector<bool>{false});
    CHECK_THROWS_AS(noise_mask(diff_stats(one), 0.0), std::invalid_argument);
    CHECK(std::isinf(default_theta(diff_stats(one))));
  }
  SUBCASE("frame 0 is never masked") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const PoseSequence p = random_pose(8, 3, 2, seed);
      const auto m = noise_mask(diff_stats(p), 1e-3);
      CHECK_FALSE(m[0]);
    }
  }
}

TEST_CASE("minmax_normalize") {
  PoseSequence p = make_pose("m", 2, 1, 2);
  p.at(0, 0, 0) = 0.0;
  p.at(1, 0, 0) = 1.0;
  p.at(0, 0, 1) = 0.3;
  p.at(1, 0, 1) = 0.3;
  ScaleRecord rec;
  const PoseSequence n = minmax_normalize(p, &rec);
  CHECK(n.at(0, 0, 0) == -1.0);
  CHECK(n.at(1, 0, 0) == 1.0);
  CHECK(n.at(0, 0, 1) == 0.0);
  CHECK(n.at(1, 0, 1) == 0.0);
  CHECK(denormalize(n, rec).coords == p.coords);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PoseSequence r = random_pose(40, 5, 3, seed);
    for (double& x : r.coords) x = x * 37.0 + 11.0;
    const PoseSequence nr = minmax_normalize(r, &rec);
    for (double x : nr.coords) CHECK((x >= -1.0 && x <= 1.0));
    const PoseSequence back = denormalize(nr, rec);
    for (std::size_t i = 0; i < r.coords.size(); ++i) CHECK(std::abs(back.coords[i] - r.coords[i]) <= 1e-9);
  }
}

TEST_CASE("segment") {
  CHECK(segment(make_pose("a", 116, 2, 2), 32).size() == 3);
  CHECK(segment(make_pose("a", 64, 2, 2), 32).size() == 2);
  CHECK(segment(make_pose("a", 31, 2, 2), 32).empty());
  CHECK_THROWS_AS(segment(make_pose("a", 3, 2, 2), 0), std::invalid_argument);

  const PoseSequence p = random_pose(116, 3, 2, 5);
  const auto segs = segment(p, 32);
  std::vector<double> joined;
  for (std::size_t m = 0; m < segs.size(); ++m) {
    CHECK(segs[m].index == m);
    CHECK(segs[m].source_id == p.id);
    CHECK(segs[m].data.shape() == Shape{32, 3, 2});
    joined.insert(joined.end(), segs[m].data.vec().begin(), segs[m].data.vec().end());
  }
  CHECK(joined == p.slice(0, 96).coords);

  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t T = 1 + rng.below(300), L = 1 + rng.below(64);
    const std::size_t n = segment(make_pose("x", T, 1, 2), L).size();
    CHECK(n == T / L);
    CHECK(n * L <= T);
    CHECK(T < (n + 1) * L);
  }
}

TEST_CASE("synthetic corpus") {
  const SkeletonSpec skel = upper_body13();
  const auto rules = make_rules(10, 16, 3);
  REQUIRE(rules.size() == 10);
  for (const auto& r : rules) CHECK((r.duration == 16 || r.duration == 32));

  SUBCASE("rules are separated window by window") {
    std::vector<PoseSequence> pieces;
    for (const auto& r : rules) {
      const PoseSequence clip = render(r);
      for (std::size_t s = 0; s < r.duration; s += 16) pieces.push_back(clip.slice(s, s + 16));
    }
    for (std::size_t i = 0; i < pieces.size(); ++i)
      for (std::size_t j = i + 1; j < pieces.size(); ++j) CHECK(mean_frame_distance(pieces[i], pieces[j]) > kRuleSeparation);
  }
  SUBCASE("one word, no noise, no placement equals the primitive") {
    SynthOptions o;
    o.n_sentences = 40;
    o.max_words = 1;
    o.jitter = 0.0;
    o.placement = false;
    for (const auto& s : synth_corpus(rules, o)) {
      std::size_t k = 0;
      while (rules[k].word != s.text) ++k;
      CHECK(s.pose.coords == render(rules[k]).coords);
    }
  }
  SUBCASE("determinism and text recovery at zero jitter") {
    SynthOptions o;
    o.n_sentences = 60;
    o.jitter = 0.0;
    const Corpus a = synth_corpus(rules, o), b = synth_corpus(rules, o);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].text == b[i].text);
      CHECK(a[i].pose.coords == b[i].pose.coords);
      CHECK(recover_text(center_and_scale(a[i].pose, skel), rules) == a[i].text);
    }
    CHECK_THROWS_AS(synth_corpus({}, o), std::invalid_argument);
  }
  SUBCASE("word counts are uniform over 1..max_words") {
    SynthOptions o;
    o.n_sentences = 10000;
    o.max_words = 6;
    o.jitter = 0.0;
    o.placement = false;
    std::vector<std::size_t> hist(7, 0);
    for (const auto& s : synth_corpus(rules, o)) {
      const std::size_t words = 1 + static_cast<std::size_t>(std::count(s.text.begin(), s.text.end(), ' '));
      ++hist[words];
    }
    const double n = 10000.0, p = 1.0 / 6.0, sigma = std::sqrt(n * p * (1 - p));
    CHECK(hist[0] == 0);
    for (std::size_t w = 1; w <= 6; ++w) CHECK(std::abs(static_cast<double>(hist[w]) - n * p) <= 3.0 * sigma);
  }
  SUBCASE("split is roughly 80/10/10 and stable") {
    std::size_t counts[3] = {0, 0, 0};
    for (int i = 0; i < 5000; ++i) {
      const std::string id = "syn" + std::to_string(i);
      CHECK(split_of(id, 1) == split_of(id, 1));
      ++counts[static_cast<int>(split_of(id, 1))];
    }
    CHECK(std::abs(static_cast<double>(counts[0]) / 5000 - 0.8) < 0.03);
    CHECK(std::abs(static_cast<double>(counts[1]) / 5000 - 0.1) < 0.03);
  }
  SUBCASE("preprocess keeps clean synthetic frames, lands in [-1,1], is idempotent") {
    SynthOptions o;
    o.n_sentences = 50;
    for (const auto& s : synth_corpus(rules, o)) {
      const PreprocessResult r = preprocess(s.pose, skel);
      CHECK(r.pose.num_frames() == s.pose.num_frames());
      for (double x : r.pose.coords) CHECK((x >= -1.0 && x <= 1.0));
      const PreprocessResult again = preprocess(r.pose, skel);
      REQUIRE(again.pose.num_frames() == r.pose.num_frames());
      double worst = 0.0;
      for (std::size_t i = 0; i < r.pose.coords.size(); ++i) worst = std::max(worst, std::abs(again.pose.coords[i] - r.pose.coords[i]));
      CHECK(worst <= 1e-9);
    }
  }
  SUBCASE("preprocess removes an injected spike and its successor") {
    SynthOptions o;
    o.n_sentences = 1;
    o.max_words = 3;
    Sample s = synth_corpus(rules, o)[0];
    const std::size_t T = s.pose.num_frames(), spike = T / 2;
    for (std::size_t v = 0; v < 13; ++v)
      if (v != joint13::rsho && v != joint13::lsho) s.pose.at(spike, v, 0) += 400.0;
    const PreprocessResult r = preprocess(s.pose, skel);
    CHECK(r.pose.num_frames() == T - 2);
    for (std::size_t k : r.kept) CHECK((k != spike && k != spike + 1));
  }
  SUBCASE("sequence with no usable frame is rejected") {
    PoseSequence p = make_pose("z", 3, 13, 2);
    CHECK_THROWS_AS(preprocess(p, skel), std::invalid_argument);
  }
}

TEST_CASE("corpus jsonl io") {
  SUBCASE("round trip is bit exact") {
    Corpus c;
    for (std::uint64_t i = 0; i < 3; ++i) c.push_back({"text \"" + std::to_string(i) + "\" é", random_pose(5 + i, 4, i == 1 ? 3 : 2, i)});
    c[0].pose.coords[0] = 1.0 / 3.0;
    c[0].pose.coords[1] = -1e-300;
    std::stringstream ss;
    write_corpus(ss, c);
    const Corpus back = read_corpus(ss);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].text == c[i].text);
      CHECK(back[i].pose.id == c[i].pose.id);
      CHECK(back[i].pose.fps == c[i].pose.fps);
      CHECK(back[i].pose.joints == c[i].pose.joints);
      CHECK(back[i].pose.channels == c[i].pose.channels);
      CHECK(back[i].pose.coords == c[i].pose.coords);
    }
  }
  SUBCASE("long sequence") {
    Corpus c{{"long", random_pose(10000, 13, 2, 42)}};
    std::stringstream ss;
    write_corpus(ss, c);
    const Corpus back = read_corpus(ss);
    double worst = 0.0;
    for (std::size_t i = 0; i < c[0].pose.coords.size(); ++i)
      worst = std::max(worst, std::abs(back[0].pose.coords[i] - c[0].pose.coords[i]));
    CHECK(worst <= 1e-15);
  }
  SUBCASE("malformed records name line and field") {
    std::stringstream ss;
    ss << R"({"id":"a","text":"x","fps":25,"frames":[[[0,0]]]})" << "\n";
    ss << R"({"id":"b","text":"y","fps":25})" << "\n";
    try {
      read_corpus(ss);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("frames") != std::string::npos);
    }
    std::stringstream ragged(R"({"id":"c","frames":[[[0,0],[1,1]],[[0,0]]]})");
    CHECK_THROWS_AS(read_corpus(ragged), ParseError);
    std::stringstream junk("{not json");
    CHECK_THROWS_AS(read_corpus(junk), ParseError);
  }
}
