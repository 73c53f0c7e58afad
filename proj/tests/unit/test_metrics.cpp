#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Eigenvalues>

#include "svq/metrics/back_translator.hpp"
#include "svq/metrics/bleu.hpp"
#include "svq/metrics/distance.hpp"
#include "svq/metrics/evaluation.hpp"
#include "svq/pose/synth.hpp"

using namespace svq;

namespace {

PoseSequence random_pose(std::size_t T, std::size_t V, Rng& rng, double lo = -1.0, double hi = 1.0) {
  PoseSequence p = make_pose("r", T, V, 2);
  for (double& x : p.coords) x = lo + (hi - lo) * rng.uniform();
  return p;
}

// minimum over every monotone path from (0,0) to (n-1,m-1)
double brute_force_dtw(const std::vector<double>& cost, std::size_t n, std::size_t m) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += cost[i * m + j];
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

double path_cost(const AlignmentPath& path, const std::vector<double>& cost, std::size_t m) {
  double s = 0.0;
  for (auto [i, j] : path) s += cost[i * m + j];
  return s;
}

GaussianStats stats(std::vector<double> mean, Eigen::MatrixXd cov) {
  GaussianStats s;
  s.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.cov = std::move(cov);
  s.count = 100;
  return s;
}

Eigen::MatrixXd random_spd(std::size_t d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a * a.transpose() / static_cast<double>(d) + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("mje: identity, unit translation and loop oracle") {
  Rng rng(1);
  const PoseSequence a = random_pose(7, 5, rng);
  CHECK(mje(a, a) == 0.0);
  PoseSequence b = a;
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t v = 0; v < 5; ++v) b.at(t, v, 0) += 1.0;
  CHECK(mje(a, b) == doctest::Approx(1.0).epsilon(1e-14));

  const PoseSequence c = random_pose(7, 5, rng);
  double oracle = 0.0;
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t v = 0; v < 5; ++v) {
      double s = 0.0;
      for (std::size_t k = 0; k < 2; ++k) s += (a.at(t, v, k) - c.at(t, v, k)) * (a.at(t, v, k) - c.at(t, v, k));
      oracle += std::sqrt(s);
    }
  CHECK(mje(a, c) == doctest::Approx(oracle / 35.0).epsilon(1e-13));
  CHECK_THROWS_AS(mje(a, random_pose(6, 5, rng)), ShapeError);
  CHECK_THROWS_AS(mje(a, random_pose(7, 4, rng)), ShapeError);
}

TEST_CASE("dtw: dynamic program equals brute-force path enumeration") {
  Rng rng(2);
  int cases = 0;
  for (int k = 0; k < 300; ++k) {
    const std::size_t n = 1 + rng.below(6), m = 1 + rng.below(6);
    PoseSequence a = random_pose(n, 2, rng), b = random_pose(m, 2, rng);
    if (k % 3 == 0) {
      // coarse grid so many paths tie
      for (double& x : a.coords) x = std::round(x);
      for (double& x : b.coords) x = std::round(x);
    }
    std::vector<double> cost(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) cost[i * m + j] = frame_cost(a, i, b, j);
    const DtwResult r = dtw(a, b);
    CHECK(r.cost == doctest::Approx(brute_force_dtw(cost, n, m)).epsilon(1e-12));
    CHECK(valid_path(r.path, n, m));
    CHECK(r.path.size() <= n + m - 1);
    CHECK(path_cost(r.path, cost, m) == doctest::Approx(r.cost).epsilon(1e-12));
    ++cases;
  }
  CHECK(cases >= 200);
}

TEST_CASE("dtw: hand-checked 3x2 table") {
  // a = [p, p, q], b = [p, q], |p - q| = 1
  PoseSequence a = make_pose("a", 3, 1, 2), b = make_pose("b", 2, 1, 2);
  a.at(2, 0, 0) = 1.0;
  b.at(1, 0, 0) = 1.0;
  const DtwResult r = dtw(a, b);
  CHECK(r.cost == 0.0);
  const AlignmentPath expect{{0, 0}, {1, 0}, {2, 1}};
  CHECK(r.path == expect);
  CHECK(dtw_mje(a, b) == 0.0);
}

TEST_CASE("dtw: ties prefer the diagonal, then (1,0)") {
  const std::vector<double> zero(9, 0.0);
  CHECK(dtw(zero, 3, 3).path == AlignmentPath{{0, 0}, {1, 1}, {2, 2}});
  CHECK(dtw(std::vector<double>(6, 0.0), 3, 2).path == AlignmentPath{{0, 0}, {1, 0}, {2, 1}});
  CHECK(dtw(std::vector<double>(6, 0.0), 2, 3).path == AlignmentPath{{0, 0}, {0, 1}, {1, 2}});
  // at (2,2) the (1,0) and (0,1) predecessors tie and the diagonal is blocked
  const std::vector<double> c{0, 0, 0,
                              0, 5, 0,
                              0, 0, 0};
  const DtwResult r = dtw(c, 3, 3);
  CHECK(r.cost == 0.0);
  CHECK(r.path == AlignmentPath{{0, 0}, {0, 1}, {1, 2}, {2, 2}});
}

TEST_CASE("dtw: identity, symmetry, tempo invariance and bounds") {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const PoseSequence a = random_pose(2 + rng.below(8), 3, rng), b = random_pose(2 + rng.below(8), 3, rng);
    const DtwResult self = dtw(a, a);
    CHECK(self.cost == 0.0);
    for (std::size_t i = 0; i < self.path.size(); ++i) CHECK(self.path[i] == std::pair{i, i});
    CHECK(dtw(a, b).cost == doctest::Approx(dtw(b, a).cost).epsilon(1e-12));

    // each frame duplicated
    PoseSequence slow = make_pose("s", 2 * a.num_frames(), 3, 2);
    for (std::size_t t = 0; t < a.num_frames(); ++t)
      for (int r = 0; r < 2; ++r) std::copy_n(a.frame(t), a.frame_size(), slow.frame(2 * t + r));
    CHECK(dtw_mje(slow, a) == 0.0);

    double max_cost = 0.0;
    for (std::size_t i = 0; i < a.num_frames(); ++i)
      for (std::size_t j = 0; j < b.num_frames(); ++j) max_cost = std::max(max_cost, frame_cost(a, i, b, j));
    CHECK(dtw_mje(a, b) <= max_cost + 1e-12);

    // the diagonal-then-pad alignment is one admissible path
    const std::size_t n = a.num_frames(), m = b.num_frames();
    double naive = 0.0;
    for (std::size_t s = 0; s < std::max(n, m); ++s) naive += frame_cost(a, std::min(s, n - 1), b, std::min(s, m - 1));
    CHECK(dtw(a, b).cost <= naive + 1e-12);
  }
  CHECK_THROWS_AS(dtw(make_pose("e", 0, 3, 2), random_pose(2, 3, rng)), std::invalid_argument);
  CHECK_THROWS_AS(dtw(random_pose(2, 3, rng), random_pose(2, 4, rng)), ShapeError);
}

TEST_CASE("frechet: one-dimensional closed form") {
  Eigen::MatrixXd c1(1, 1), c2(1, 1);
  c1 << 1.0;
  c2 << 4.0;
  CHECK(std::abs(frechet_distance(stats({0.0}, c1), stats({1.0}, c2)) - 2.0) <= 1e-10);
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    const double m1 = rng.normal(), m2 = rng.normal(), s1 = 0.1 + rng.uniform(), s2 = 0.1 + 3 * rng.uniform();
    c1 << s1 * s1;
    c2 << s2 * s2;
    const double expect = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
    CHECK(std::abs(frechet_distance(stats({m1}, c1), stats({m2}, c2)) - expect) <= 1e-10);
  }
}

TEST_CASE("frechet: diagonal closed form") {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const std::size_t d = 1 + rng.below(8);
    std::vector<double> mp(d), mq(d);
    Eigen::MatrixXd cp = Eigen::MatrixXd::Zero(d, d), cq = cp;
    double expect = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      mp[i] = rng.normal();
      mq[i] = rng.normal();
      const double l = 0.01 + 2 * rng.uniform(), n = 0.01 + 2 * rng.uniform();
      cp(i, i) = l;
      cq(i, i) = n;
      expect += (mp[i] - mq[i]) * (mp[i] - mq[i]) + (std::sqrt(l) - std::sqrt(n)) * (std::sqrt(l) - std::sqrt(n));
    }
    CHECK(std::abs(frechet_distance(stats(mp, cp), stats(mq, cq)) - expect) <= 1e-10);
  }
}

TEST_CASE("frechet: full covariances against the product-eigenvalue form") {
  // tr (S_p S_q)^1/2 = sum of square roots of the eigenvalues of S_p S_q
  Rng rng(6);
  for (int k = 0; k < 30; ++k) {
    const std::size_t d = 2 + rng.below(6);
    const Eigen::MatrixXd cp = random_spd(d, rng), cq = random_spd(d, rng);
    std::vector<double> mp(d), mq(d);
    for (std::size_t i = 0; i < d; ++i) mp[i] = rng.normal(), mq[i] = rng.normal();
    Eigen::EigenSolver<Eigen::MatrixXd> es(cp * cq);
    double tr = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr += std::sqrt(es.eigenvalues()[i].real());
    const Eigen::VectorXd dm = stats(mp, cp).mean - stats(mq, cq).mean;
    const double expect = dm.squaredNorm() + cp.trace() + cq.trace() - 2 * tr;
    const GaussianStats p = stats(mp, cp), q = stats(mq, cq);
    CHECK(frechet_distance(p, q) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(frechet_distance(p, q) == doctest::Approx(frechet_distance(q, p)).epsilon(1e-9));
    CHECK(frechet_distance(p, p) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(frechet_distance(p, q) >= 0.0);
  }
}

TEST_CASE("frechet: errors") {
  Eigen::MatrixXd c1 = Eigen::MatrixXd::Identity(2, 2), c3 = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(frechet_distance(stats({0, 0}, c1), stats({0, 0, 0}, c3)), ShapeError);
  Eigen::MatrixXd bad = c1;
  bad(0, 0) = -1.0;
  CHECK_THROWS_AS(frechet_distance(stats({0, 0}, bad), stats({0, 0}, c1)), NumericError);
  Eigen::MatrixXd asym = c1;
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(frechet_distance(stats({0, 0}, asym), stats({0, 0}, c1)), NumericError);
}

TEST_CASE("fgd: identical sets, symmetry and small-sample warning") {
  Rng rng(7);
  std::vector<std::vector<double>> x(60, std::vector<double>(8)), y(40, std::vector<double>(8));
  for (auto& r : x)
    for (double& v : r) v = rng.normal();
  for (auto& r : y)
    for (double& v : r) v = 0.5 + 2.0 * rng.normal();
  const FgdResult same = fgd_features(x, x);
  CHECK(std::abs(same.value) <= 1e-6);
  CHECK(same.warnings.empty());
  CHECK(fgd_features(x, y).value == doctest::Approx(fgd_features(y, x).value).epsilon(1e-9));
  CHECK(fgd_features(x, y).value > 1.0);

  const std::vector<std::vector<double>> few(x.begin(), x.begin() + 4);
  const FgdResult w = fgd_features(x, few);
  CHECK(w.warnings.size() == 1);
  CHECK(std::isfinite(w.value));

  // the regularizer keeps a rank-deficient covariance usable
  const GaussianStats g = fit_gaussian(few);
  CHECK(g.cov.rows() == 8);
  CHECK(g.cov.diagonal().minCoeff() >= 1e-6);
  CHECK_THROWS_AS(fit_gaussian(std::vector<std::vector<double>>{{1.0}}), std::invalid_argument);
}

TEST_CASE("fgd: unbiased covariance matches a loop oracle") {
  Rng rng(8);
  std::vector<std::vector<double>> x(10, std::vector<double>(3));
  for (auto& r : x)
    for (double& v : r) v = rng.normal();
  const GaussianStats g = fit_gaussian(x, 0.0);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double ma = 0, mb = 0;
      for (auto& r : x) ma += r[a] / 10.0, mb += r[b] / 10.0;
      double s = 0;
      for (auto& r : x) s += (r[a] - ma) * (r[b] - mb);
      CHECK(g.cov(a, b) == doctest::Approx(s / 9.0).epsilon(1e-12));
    }
}

TEST_CASE("bleu: hand-counted example") {
  // clipped matches 5/6, 3/5, 2/4, 1/3; equal lengths so no brevity penalty
  const std::vector<std::string> c{"the cat sat on the mat"}, r{"the cat sat on a mat"};
  const BleuStats s = bleu_stats(c, r);
  CHECK(s.matches[0] == 5);
  CHECK(s.totals[0] == 6);
  CHECK(s.matches[1] == 3);
  CHECK(s.matches[2] == 2);
  CHECK(s.matches[3] == 1);
  CHECK(std::abs(bleu4(c, r) - std::pow(1.0 / 12.0, 0.25)) <= 1e-12);
}

TEST_CASE("bleu: identity, disjoint, brevity and smoothing") {
  const std::vector<std::string> a{"one two three four five", "six seven eight nine"};
  CHECK(bleu4(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<std::string> d{"x y z w", "p q r s"};
  CHECK(bleu4(d, a) == 0.0);

  const std::vector<std::string> c{"a b c d"}, r{"a b c d e f"};
  CHECK(std::abs(bleu4(c, r) - std::exp(1.0 - 6.0 / 4.0)) <= 1e-12);

  // no 4-gram match: zero unsmoothed, positive smoothed
  const std::vector<std::string> c2{"a b c x d"}, r2{"a b c y d"};
  CHECK(bleu4(c2, r2) == 0.0);
  const double sm = std::pow((4.0 / 5.0) * (2.0 + 1.0) / (4.0 + 1.0) * (1.0 + 1.0) / (3.0 + 1.0) * 1.0 / 3.0, 0.25);
  CHECK(std::abs(bleu4(c2, r2, true) - sm) <= 1e-12);

  CHECK(bleu4(std::vector<std::string>{""}, std::vector<std::string>{"a b"}) == 0.0);
  CHECK_THROWS_AS(bleu4(std::vector<std::string>{}, std::vector<std::string>{}), std::invalid_argument);
  CHECK_THROWS_AS(bleu4(c, a), std::invalid_argument);
}

TEST_CASE("bleu: range and invariance under vocabulary relabeling") {
  Rng rng(9);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
  for (int k = 0; k < 50; ++k) {
    std::vector<std::string> c, r, c2, r2;
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (int s = 0; s < 3; ++s) {
      std::string x, y, x2, y2;
      for (std::size_t w = 0, n = 3 + rng.below(6); w < n; ++w) {
        const std::size_t t = rng.below(5);
        x += vocab[t] + " ";
        x2 += vocab[perm[t]] + " ";
      }
      for (std::size_t w = 0, n = 3 + rng.below(6); w < n; ++w) {
        const std::size_t t = rng.below(5);
        y += vocab[t] + " ";
        y2 += vocab[perm[t]] + " ";
      }
      c.push_back(x), r.push_back(y), c2.push_back(x2), r2.push_back(y2);
    }
    const double b = bleu4(c, r);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    CHECK(b == bleu4(c2, r2));
  }
}

TEST_CASE("embedder: deterministic, fixed width, rejects short input") {
  const StgpDvae dvae(DvaeConfig{}, upper_body13(), 11);
  const Embedder e = dvae_embedder(dvae);
  Rng rng(10);
  const PoseSequence a = random_pose(40, 13, rng), b = random_pose(40, 13, rng);
  const auto fa = e(a);
  CHECK(fa.size() == dvae.feature_dim());
  CHECK(fa == e(a));
  double dist = 0.0;
  const auto fb = e(b);
  for (std::size_t i = 0; i < fa.size(); ++i) dist += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  CHECK(dist > 0.0);
  CHECK_THROWS_AS(e(random_pose(15, 13, rng)), std::invalid_argument);
}

TEST_CASE("sweep csv and report json layout") {
  SweepRow r;
  r.beam = 2;
  r.report.fgd = 1.5;
  r.report.dtw = 3.0;
  r.report.dtw_mje = 0.25;
  r.report.bleu4 = 0.5;
  r.report.n = 4;
  const std::vector<SweepRow> rows{r};
  CHECK(sweep_csv(rows) == "beam,fgd,dtw,dtw_mje,bleu4\n2,1.5,3,0.25,0.5\n");
  const auto j = r.report.to_json();
  for (const char* k : {"fgd", "dtw_mje", "dtw", "bleu4", "n", "warnings"}) CHECK(j.contains(k));
  CHECK(j["n"] == 4);
}

TEST_CASE("back-translator: learns synthetic words and separates noise") {
  const SkeletonSpec skel = upper_body13();
  const auto rules = make_rules(6, 16, 21);
  SynthOptions o;
  o.n_sentences = 200;
  o.seed = 21;
  std::vector<TextPose> train, val;
  std::vector<std::string> texts;
  for (const Sample& s : synth_corpus(rules, o)) {
    TextPose tp{s.text, preprocess(s.pose, skel).pose};
    (val.size() < 30 ? val : train).push_back(tp);
    texts.push_back(s.text);
  }
  BackTranslatorConfig c;
  c.d_model = 32;
  c.d_ff = 64;
  c.steps = 800;
  c.eval_every = 400;
  c.optimizer.lr = 3e-3;
  BackTranslator bt(c, BpeModel::train(texts, 60), 13, 2, 5);
  CHECK_FALSE(bt.trained());
  std::vector<PoseSequence> vp;
  std::vector<std::string> vt;
  for (const auto& v : val) vp.push_back(v.pose), vt.push_back(v.text);
  CHECK_THROWS_AS(back_translate_eval(vp, vt, bt), std::logic_error);

  Rng rng(6);
  const BtTrainLog log = bt.train(train, val, rng);
  CHECK(bt.trained());
  CHECK(log.validation.size() == 2);
  CHECK(log.loss_per_step.back() < log.loss_per_step.front());
  MESSAGE("back-translator validation BLEU-4 " << bt.validation_bleu());
  CHECK(bt.validation_bleu() > 0.3);

  // ground-truth poses reproduce the recorded validation score exactly
  const BtScore gt = back_translate_eval(vp, vt, bt);
  CHECK(gt.bleu4 == bt.validation_bleu());
  CHECK(gt.ground_truth_bleu4 == bt.validation_bleu());
  CHECK(back_translate_eval(vp, vt, bt).bleu4 == gt.bleu4);

  Rng noise(7);
  std::vector<PoseSequence> wn;
  for (const auto& p : vp) wn.push_back(random_pose(p.num_frames(), 13, noise));
  CHECK(back_translate_eval(wn, vt, bt).bleu4 < gt.bleu4);
  CHECK(bt.translate(make_pose("short", 3, 13, 2)).empty());
}
