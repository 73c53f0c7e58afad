#include "svq/pipeline/selfcheck.hpp"

#include "svq/numerics/ops.hpp"
#include "svq/numerics/sampling.hpp"

namespace svq {

namespace {

std::vector<std::string> trainable_names(const ParamStore& store) {
  std::vector<std::string> out;
  for (const auto& n : store.names())
    if (n.find("running_") == std::string::npos && n.find("injected") == std::string::npos) out.push_back(n);
  return out;
}

std::vector<int> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> v(n);
  for (int& x : v) x = static_cast<int>(rng.below(vocab));
  return v;
}

}  // namespace

GradSuiteResult dvae_gradcheck(const DvaeConfig& config, const SkeletonSpec& skeleton, std::uint64_t seed,
                               std::size_t coords_per_tensor) {
  StgpDvae m(config, skeleton, seed);
  Rng rng(seed ^ 0x5eedu);
  std::vector<Tensor> segs;
  for (int s = 0; s < 2; ++s) {
    Tensor t({config.window, skeleton.V, config.channels});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 2.0 * rng.uniform() - 1.0;
    segs.push_back(std::move(t));
  }
  const Tensor x = stack_segments(segs);
  for (const auto& name : m.store().names()) {
    if (name.find("decoder/head/weight") != std::string::npos || name.find("position") != std::string::npos) {
      Var p = m.store().get(name);
      Tensor& v = p.mutable_value();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * rng.normal();
    }
  }
  const Tensor g = sample_gumbel({2, config.codebook_size}, rng);
  GradCheckOptions opts;
  opts.max_coords_per_tensor = coords_per_tensor;
  opts.seed = seed;
  const auto params = m.store().trainable();
  const auto names = trainable_names(m.store());
  GradSuiteResult r;
  r.module = "stgp_dvae";
  r.loss = finite_diff_check([&] { return dvae_loss(m, Var(x), 2, 0.6, g, 0.1).total; }, params, names, opts);
  r.output = finite_diff_check([&] { return ops::mean(m.encode(Var(x), 2, true).logits); }, params, names, opts);
  return r;
}

GradSuiteResult generator_gradcheck(GeneratorConfig config, std::uint64_t seed, std::size_t coords_per_tensor) {
  config.dropout = 0.0;
  const Generator m(config, seed);
  Rng rng(seed ^ 0x5eedu);
  const std::size_t K = config.codebook_size;
  GenBatch b{{random_ids(rng, 4, config.text_vocab), random_ids(rng, 3, config.text_vocab)},
             {random_ids(rng, 3, K), random_ids(rng, 2, K)}};
  std::vector<Tensor> lat;
  for (std::size_t n : {3, 2}) {
    Tensor t({n, K});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    lat.push_back(std::move(t));
  }
  GradCheckOptions opts;
  opts.max_coords_per_tensor = coords_per_tensor;
  opts.seed = seed;
  const auto params = m.store().trainable();
  const auto names = trainable_names(m.store());
  GradSuiteResult r;
  r.module = "generator";
  // beta well above the training value so the latent term is actually probed
  r.loss = finite_diff_check([&] { return generator_loss(m, b, lat, 0.3).total; }, params, names, opts);
  r.output = finite_diff_check([&] { return ops::mean(m.forward(b).logits); }, params, names, opts);
  return r;
}

}  // namespace svq
