#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "svq/dvae/stgp.hpp"
#include "svq/numerics/gradcheck.hpp"
#include "svq/numerics/ops.hpp"
#include "svq/numerics/sampling.hpp"
#include "svq/pose/synth.hpp"

using namespace svq;

namespace {

Tensor random_segment(const DvaeConfig& c, std::size_t V, Rng& rng) {
  Tensor t({c.window, V, c.channels});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 2.0 * rng.uniform() - 1.0;
  return t;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -3.0, double hi = 3.0) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

std::vector<Tensor> synthetic_segments(std::size_t sentences, std::uint64_t seed) {
  const SkeletonSpec skel = upper_body13();
  SynthOptions o;
  o.n_sentences = sentences;
  o.seed = seed;
  std::vector<Tensor> out;
  for (const Sample& s : synth_corpus(make_rules(10, 16, seed), o))
    for (const SignSegment& g : segment(preprocess(s.pose, skel).pose, 16)) out.push_back(g.data);
  return out;
}

}  // namespace

TEST_CASE("dvae config: validation names the field") {
  const SkeletonSpec skel = upper_body13();
  DvaeConfig c;
  CHECK_NOTHROW(c.validate(skel));
  c.window = 12;
  CHECK_THROWS_WITH_AS(c.validate(skel), doctest::Contains("window"), std::invalid_argument);
  c = DvaeConfig{};
  c.codebook_size = 1;
  CHECK_THROWS_WITH_AS(c.validate(skel), doctest::Contains("codebook_size"), std::invalid_argument);
  c = DvaeConfig{};
  c.temporal_kernel = 2;
  CHECK_THROWS_AS(c.validate(skel), std::invalid_argument);
}

TEST_CASE("encoder: pyramid extents and feature layout") {
  const StgpDvae m(DvaeConfig{}, upper_body13(), 1);
  CHECK(m.levels_used() == 3);
  CHECK(m.frames_after(0) == 16);
  CHECK(m.frames_after(4) == 1);
  CHECK(m.vertices_after(0) == 13);
  CHECK(m.vertices_after(1) == 13);
  CHECK(m.vertices_after(2) == 5);
  CHECK(m.vertices_after(3) == 2);
  CHECK(m.vertices_after(4) == 1);
  Rng rng(3);
  std::vector<Tensor> segs{random_segment(m.config(), 13, rng), random_segment(m.config(), 13, rng)};
  CHECK(m.logits(segs).shape() == Shape{2, 64});
  CHECK(m.features(segs).shape() == Shape{2, 64});
  CHECK_THROWS_AS(m.encode(Var(Tensor::zeros({16 * 13, 2})), 2, false), ShapeError);
}

TEST_CASE("encoder: all-zero segment with zero biases gives zero logits") {
  const StgpDvae m(DvaeConfig{}, upper_body13(), 4);
  std::vector<Tensor> z{Tensor::zeros({16, 13, 2})};
  const Tensor h = m.logits(z);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == 0.0);
  NoGradGuard guard;
  const Tensor ht = m.encode(Var(stack_segments(z)), 1, true).logits.value();
  for (std::size_t i = 0; i < ht.size(); ++i) CHECK(ht[i] == 0.0);
}

TEST_CASE("encoder: identical segments give identical logits") {
  const StgpDvae m(DvaeConfig{}, upper_body13(), 5);
  Rng rng(9);
  const Tensor s = random_segment(m.config(), 13, rng);
  std::vector<Tensor> segs{s, random_segment(m.config(), 13, rng), s};
  const Tensor h = m.logits(segs);
  for (std::size_t k = 0; k < 64; ++k) CHECK(h[k] == h[2 * 64 + k]);
  // batch composition does not leak into eval-mode logits
  std::vector<Tensor> alone{s};
  const Tensor h1 = m.logits(alone);
  for (std::size_t k = 0; k < 64; ++k) CHECK(h1[k] == doctest::Approx(h[k]).epsilon(1e-12));
}

TEST_CASE("gumbel softmax: weights sum to one and tau must be positive") {
  Rng rng(11);
  NoGradGuard guard;
  for (double tau : {0.05, 0.1, 0.5, 0.9, 2.0}) {
    const Tensor h = random_matrix(50, 17, rng, -10.0, 10.0);
    const Tensor w = gumbel_softmax(Var(h), tau, rng).value();
    for (std::size_t r = 0; r < 50; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 17; ++k) {
        CHECK(w[r * 17 + k] >= 0.0);
        s += w[r * 17 + k];
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  const Tensor h = random_matrix(2, 3, rng);
  CHECK_THROWS_AS(gumbel_softmax(Var(h), 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gumbel_softmax(Var(h), -1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gumbel_softmax(Var(h), 0.5, Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("gumbel softmax: small tau approaches the one-hot of argmax(log p + g)") {
  Rng rng(12);
  NoGradGuard guard;
  const std::size_t K = 8;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor h = random_matrix(1, K, rng);
    const Tensor g = sample_gumbel({1, K}, rng);
    const Tensor lp = ops::log_softmax_rows(Var(h)).value();
    std::vector<double> score(K);
    for (std::size_t k = 0; k < K; ++k) score[k] = lp[k] + g[k];
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    if (sorted[K - 1] - sorted[K - 2] < 1e-3) continue;  // near-tie, limit is slow
    const int best = tokenize(score);
    const Tensor w = gumbel_softmax(Var(h), 1e-5, g).value();
    for (std::size_t k = 0; k < K; ++k) CHECK(w[k] == doctest::Approx(static_cast<int>(k) == best ? 1.0 : 0.0));
  }
}

TEST_CASE("gumbel max: argmax frequencies match softmax within 3 sigma over 1e5 draws") {
  const std::size_t N = 100000, K = 4;
  const std::vector<double> logits{0.3, -1.2, 1.1, 0.0};
  Tensor h({N, K});
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t k = 0; k < K; ++k) h[r * K + k] = logits[k];
  Rng rng(2024);
  NoGradGuard guard;
  const Tensor w = gumbel_softmax(Var(h), 0.5, rng).value();
  std::vector<double> count(K, 0.0);
  for (std::size_t r = 0; r < N; ++r) count[tokenize(std::span<const double>(w.ptr() + r * K, K))] += 1.0;
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  for (std::size_t k = 0; k < K; ++k) {
    const double p = std::exp(logits[k]) / z;
    const double sigma = std::sqrt(static_cast<double>(N) * p * (1.0 - p));
    CHECK(std::abs(count[k] - static_cast<double>(N) * p) <= 3.0 * sigma);
  }
}

TEST_CASE("tokenize: lowest index on ties, invariant to positive affine maps") {
  CHECK(tokenize(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
  CHECK(tokenize(std::vector<double>{5.0, 5.0}) == 0);
  CHECK_THROWS_AS(tokenize(std::vector<double>{}), std::invalid_argument);
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> h(1 + rng.below(20));
    for (double& v : h) v = 10.0 * rng.uniform() - 5.0;
    const double a = 0.01 + 100.0 * rng.uniform(), b = 200.0 * rng.uniform() - 100.0;
    std::vector<double> t = h;
    for (double& v : t) v = a * v + b;
    CHECK(tokenize(t) == tokenize(h));
  }
}

TEST_CASE("quantize: one-hot selects a row, uniform gives the mean, matches loop") {
  Rng rng(14);
  const Tensor E = random_matrix(6, 5, rng);
  NoGradGuard guard;
  Tensor oh = Tensor::zeros({1, 6});
  oh[4] = 1.0;
  const Tensor z1 = quantize(Var(oh), Var(E)).value();
  for (std::size_t d = 0; d < 5; ++d) CHECK(z1[d] == E[4 * 5 + d]);
  Tensor u({1, 6});
  u.fill(1.0 / 6.0);
  const Tensor zu = quantize(Var(u), Var(E)).value();
  for (std::size_t d = 0; d < 5; ++d) {
    double m = 0.0;
    for (std::size_t k = 0; k < 6; ++k) m += E[k * 5 + d] / 6.0;
    CHECK(zu[d] == doctest::Approx(m).epsilon(1e-13));
  }
  const Tensor w = ops::softmax_rows(Var(random_matrix(3, 6, rng))).value();
  const Tensor z = quantize(Var(w), Var(E)).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t d = 0; d < 5; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) s += w[r * 6 + k] * E[k * 5 + d];
      CHECK(z[r * 5 + d] == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("decoder: output layout, determinism, token decoding") {
  const StgpDvae m(DvaeConfig{}, upper_body13(), 6);
  Rng rng(15);
  const Tensor z = random_matrix(3, 32, rng);
  NoGradGuard guard;
  const Tensor y1 = m.decode(Var(z), false).value();
  const Tensor y2 = m.decode(Var(z), false).value();
  CHECK(y1.shape() == Shape{3 * 16 * 13, 2});
  CHECK(y1.vec() == y2.vec());
  CHECK_THROWS_AS(m.decode(Var(random_matrix(3, 31, rng)), false), ShapeError);
  const std::vector<int> ids{5, 0, 5};
  const Tensor d = m.decode_tokens(ids);
  CHECK(d.shape() == Shape{48, 13, 2});
  for (std::size_t i = 0; i < 16 * 13 * 2; ++i) CHECK(d[i] == d[2 * 16 * 13 * 2 + i]);
}

TEST_CASE("recon loss: per-frame squared error") {
  NoGradGuard guard;
  const Tensor ones = Tensor::ones({16 * 13, 2});
  CHECK(recon_loss(Var(ones), Var(Tensor::zeros({16 * 13, 2})), 16).item() == doctest::Approx(26.0).epsilon(1e-14));
  Rng rng(16);
  const Tensor a = random_matrix(2 * 16 * 13, 2, rng), b = random_matrix(2 * 16 * 13, 2, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(recon_loss(Var(a), Var(b), 32).item() == doctest::Approx(s / 32.0).epsilon(1e-13));
  CHECK(recon_loss(Var(a), Var(a), 32).item() == 0.0);
}

TEST_CASE("diversity loss: negated usage entropy") {
  NoGradGuard guard;
  Tensor u({4, 1024});
  u.fill(1.0 / 1024.0);
  CHECK(std::abs(diversity_loss(Var(u)).item() + std::log(1024.0)) <= 1e-12);
  // each row one-hot on a different code: batch mean is uniform over 4
  Tensor spread = Tensor::zeros({4, 8});
  for (std::size_t r = 0; r < 4; ++r) spread[r * 8 + 2 * r] = 1.0;
  CHECK(diversity_loss(Var(spread)).item() == doctest::Approx(-std::log(4.0)).epsilon(1e-14));
  Tensor one = Tensor::zeros({3, 8});
  for (std::size_t r = 0; r < 3; ++r) one[r * 8 + 5] = 1.0;
  CHECK(diversity_loss(Var(one)).item() == 0.0);

  Rng rng(17);
  const Tensor w = ops::softmax_rows(Var(random_matrix(5, 9, rng))).value();
  double h = 0.0;
  for (std::size_t k = 0; k < 9; ++k) {
    double p = 0.0;
    for (std::size_t r = 0; r < 5; ++r) p += w[r * 9 + k] / 5.0;
    h -= p * std::log(p);
  }
  CHECK(diversity_loss(Var(w)).item() == doctest::Approx(-h).epsilon(1e-13));
}

TEST_CASE("dvae loss: composition of the two terms") {
  NoGradGuard guard;
  Tensor u({2, 1024});
  u.fill(1.0 / 1024.0);
  const Tensor y = Tensor::ones({16 * 13, 2});
  const double perfect = recon_loss(Var(y), Var(y), 16).item() + 0.1 * diversity_loss(Var(u)).item();
  CHECK(perfect == doctest::Approx(-0.6931).epsilon(1e-4));

  const StgpDvae m(DvaeConfig{}, upper_body13(), 7);
  Rng rng(18);
  std::vector<Tensor> segs{random_segment(m.config(), 13, rng), random_segment(m.config(), 13, rng)};
  const Tensor x = stack_segments(segs);
  const Tensor g = sample_gumbel({2, 64}, rng);
  const DvaeLoss l0 = dvae_loss(m, Var(x), 2, 0.7, g, 0.0);
  CHECK(l0.total.item() == l0.recon);
  const DvaeLoss l1 = dvae_loss(m, Var(x), 2, 0.7, g, 0.1);
  CHECK(l1.recon == l0.recon);
  CHECK(l1.total.item() == doctest::Approx(l1.recon + 0.1 * l1.diversity).epsilon(1e-14));
  CHECK_THROWS_AS(dvae_loss(m, Var(x), 2, 0.7, g, -0.1), std::invalid_argument);
}

TEST_CASE("dvae gradients match finite differences") {
  StgpDvae m(DvaeConfig{}, upper_body13(), 8);
  Rng rng(19);
  std::vector<Tensor> segs{random_segment(m.config(), 13, rng), random_segment(m.config(), 13, rng)};
  const Tensor x = stack_segments(segs);
  // push the zero-initialized decoder head and position tables off zero so
  // every parameter carries gradient signal
  for (const auto& name : m.store().names()) {
    if (name.find("decoder/head/weight") != std::string::npos || name.find("position") != std::string::npos) {
      Var p = m.store().get(name);
      Tensor& v = p.mutable_value();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * rng.normal();
    }
  }
  const Tensor g = sample_gumbel({2, 64}, rng);
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 6;
  opts.seed = 3;
  const auto params = m.store().trainable();
  const auto names = m.store().names();
  std::vector<std::string> trainable_names;
  for (const auto& n : names)
    if (n.find("running_") == std::string::npos) trainable_names.push_back(n);

  const GradCheckResult total =
      finite_diff_check([&] { return dvae_loss(m, Var(x), 2, 0.6, g, 0.1).total; }, params, trainable_names, opts);
  INFO("worst " << total.worst << " skipped " << total.skipped_at_kinks);
  CHECK(total.checked > params.size() * 3);
  CHECK(total.max_rel_error <= 1e-4);

  const GradCheckResult logits = finite_diff_check(
      [&] { return ops::mean(m.encode(Var(x), 2, true).logits); }, params, trainable_names, opts);
  INFO("worst " << logits.worst);
  CHECK(logits.max_rel_error <= 1e-4);
}

TEST_CASE("anneal schedule: endpoints and monotone decrease") {
  for (auto shape : {AnnealSchedule::linear, AnnealSchedule::exponential}) {
    const AnnealSchedule s{0.9, 0.1, 100, shape};
    CHECK(s.tau(0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.tau(100) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.tau(1000) == doctest::Approx(0.1).epsilon(1e-15));
    for (std::size_t t = 0; t < 100; ++t) CHECK(s.tau(t + 1) <= s.tau(t));
  }
  CHECK(AnnealSchedule{0.9, 0.1, 100, AnnealSchedule::linear}.tau(50) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(AnnealSchedule{0.9, 0.1, 100, AnnealSchedule::exponential}.tau(50) ==
        doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("learning-rate schedule: cosine from base to floor") {
  CHECK(scheduled_lr(1.0, 0, 11, true, 0.05) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0, 10, 11, true, 0.05) == doctest::Approx(0.05));
  CHECK(scheduled_lr(1.0, 5, 11, true, 0.0) == doctest::Approx(0.5));
  CHECK(scheduled_lr(2.0, 7, 11, false, 0.05) == 2.0);
}

TEST_CASE("usage statistics: perplexity and code separation") {
  CHECK(codebook_perplexity(std::vector<int>{0, 0, 1, 1}, 4) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(codebook_perplexity(std::vector<int>{3, 3, 3}, 4) == doctest::Approx(1.0));
  CHECK(codebook_perplexity(std::vector<int>{0, 1, 2, 3}, 4) == doctest::Approx(4.0).epsilon(1e-14));
  const Tensor e({3, 2}, {0.0, 0.0, 3.0, 4.0, 0.0, 1.0});
  CHECK(min_code_separation(e) == doctest::Approx(1.0));
  const StgpDvae m(DvaeConfig{}, upper_body13(), 9);
  CHECK(min_code_separation(m.codebook().value()) > 0.0);
}

TEST_CASE("training: deterministic, recon falls, parameters frozen afterwards") {
  const std::vector<Tensor> segs = synthetic_segments(12, 21);
  REQUIRE(segs.size() >= 16);
  DvaeTrainConfig tc;
  tc.steps = 100;
  tc.batch = 8;
  tc.log_every = 0;
  std::size_t checkpoints = 0;
  tc.on_checkpoint = [&](std::size_t) { ++checkpoints; };

  StgpDvae a(DvaeConfig{}, upper_body13(), 1);
  Rng ra(5);
  const DvaeTrainLog la = train_dvae(a, segs, tc, ra);
  CHECK(checkpoints == 1);
  CHECK(la.entries.size() == 1);
  REQUIRE(la.recon_per_step.size() == 100);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += la.recon_per_step[i];
    tail += la.recon_per_step[90 + i];
  }
  CHECK(tail < 0.2 * head);
  for (const Var& p : a.store().trainable()) CHECK_FALSE(p.requires_grad());

  tc.steps = 20;
  tc.on_checkpoint = nullptr;
  StgpDvae b(DvaeConfig{}, upper_body13(), 1), c(DvaeConfig{}, upper_body13(), 1);
  Rng rb(6), rc(6);
  const double fb = train_dvae(b, segs, tc, rb).final_loss;
  const double fc = train_dvae(c, segs, tc, rc).final_loss;
  CHECK(fb == fc);
  const auto sb = b.store().state(), sc = c.store().state();
  for (const auto& [name, t] : sb) CHECK(t.vec() == sc.at(name).vec());
}

TEST_CASE("training: divergence rolls back and reports the step") {
  std::vector<Tensor> segs = synthetic_segments(2, 22);
  StgpDvae m(DvaeConfig{}, upper_body13(), 1);
  const NamedTensors before = m.store().state();
  segs[0][7] = std::numeric_limits<double>::quiet_NaN();
  DvaeTrainConfig tc;
  tc.steps = 5;
  tc.batch = static_cast<std::size_t>(segs.size());
  Rng rng(1);
  try {
    train_dvae(m, segs, tc, rng);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 0);
  }
  for (const auto& [name, t] : m.store().state()) CHECK(t.vec() == before.at(name).vec());
  CHECK_THROWS_AS(train_dvae(m, std::vector<Tensor>{}, tc, rng), std::invalid_argument);
}
