#include "svq/dvae/stgp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "svq/numerics/sampling.hpp"

namespace svq {

namespace {

using Dense = std::vector<std::vector<double>>;  // [out][in]

// D^-1/2 (A + I) D^-1/2
Dense normalized_adjacency(std::size_t V, const std::vector<std::array<std::size_t, 2>>& edges) {
  Dense a(V, std::vector<double>(V, 0.0));
  for (std::size_t v = 0; v < V; ++v) a[v][v] = 1.0;
  for (const auto& e : edges) a[e[0]][e[1]] = a[e[1]][e[0]] = 1.0;
  std::vector<double> deg(V, 0.0);
  for (std::size_t v = 0; v < V; ++v) deg[v] = std::accumulate(a[v].begin(), a[v].end(), 0.0);
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) a[i][j] /= std::sqrt(deg[i] * deg[j]);
  return a;
}

Dense pooling_matrix(const Partition& p, std::size_t in) {
  Dense m(p.size(), std::vector<double>(in, 0.0));
  for (std::size_t g = 0; g < p.size(); ++g)
    for (std::size_t v : p[g]) m[g][v] = 1.0 / static_cast<double>(p[g].size());
  return m;
}

Dense product(const Dense& a, const Dense& b) {
  Dense c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Applies a per-frame vertex map to every (segment, frame).
ops::MixTable vertex_mix(std::size_t frames_total, const Dense& m) {
  const std::size_t vout = m.size(), vin = m[0].size();
  ops::MixTable t;
  t.in_rows = frames_total * vin;
  for (std::size_t f = 0; f < frames_total; ++f) {
    for (std::size_t o = 0; o < vout; ++o) {
      for (std::size_t i = 0; i < vin; ++i)
        if (m[o][i] != 0.0) t.add(f * vin + i, m[o][i]);
      t.end_row();
    }
  }
  return t;
}

// Zero-padded temporal window of `kernel` taps centred on frame t*stride.
ops::IndexTable temporal_taps(std::size_t B, std::size_t T, std::size_t V, std::size_t kernel, std::size_t stride) {
  const std::size_t Tout = T / stride;
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  ops::IndexTable t;
  t.rows = B * Tout * V;
  t.slots = kernel;
  t.src.reserve(t.rows * kernel);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t to = 0; to < Tout; ++to)
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t j = 0; j < kernel; ++j) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride + j) - pad;
          t.src.push_back(ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)
                              ? -1
                              : static_cast<std::ptrdiff_t>((b * T + static_cast<std::size_t>(ti)) * V + v));
        }
  return t;
}

ops::MixTable temporal_avg2(std::size_t B, std::size_t T, std::size_t V) {
  ops::MixTable t;
  t.in_rows = B * T * V;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t to = 0; to < T / 2; ++to)
      for (std::size_t v = 0; v < V; ++v) {
        t.add((b * T + 2 * to) * V + v, 0.5);
        t.add((b * T + 2 * to + 1) * V + v, 0.5);
        t.end_row();
      }
  return t;
}

// Nearest-neighbour x2 in time plus copying each coarse vertex to its members.
ops::MixTable upsample(std::size_t B, std::size_t T, std::size_t Vin, const std::vector<std::size_t>& owner) {
  ops::MixTable t;
  t.in_rows = B * T * Vin;
  const std::size_t Vout = owner.size();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t tt = 0; tt < 2 * T; ++tt)
      for (std::size_t v = 0; v < Vout; ++v) {
        t.add((b * T + tt / 2) * Vin + owner[v], 1.0);
        t.end_row();
      }
  return t;
}

// Row r of every segment reads row r of a per-segment table.
ops::IndexTable tile_rows(std::size_t B, std::size_t rows_per_segment) {
  ops::IndexTable t;
  t.rows = B * rows_per_segment;
  t.slots = 1;
  t.src.resize(t.rows);
  for (std::size_t i = 0; i < t.rows; ++i) t.src[i] = static_cast<std::ptrdiff_t>(i % rows_per_segment);
  return t;
}

ops::MixTable segment_mean(std::size_t B, std::size_t rows_per_segment) {
  ops::MixTable t;
  t.in_rows = B * rows_per_segment;
  const double w = 1.0 / static_cast<double>(rows_per_segment);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < rows_per_segment; ++r) t.add(b * rows_per_segment + r, w);
    t.end_row();
  }
  return t;
}

Var add_residual(const Var& main, const Var& skip) { return ops::add(main, skip); }

}  // namespace

void DvaeConfig::validate(const SkeletonSpec& skel) const {
  if (block_channels.empty()) throw std::invalid_argument("config field 'block_channels' must be nonempty");
  if (channels == 0) throw std::invalid_argument("config field 'channels' must be positive");
  if (codebook_size < 2) throw std::invalid_argument("config field 'codebook_size' must be >= 2");
  if (code_dim == 0) throw std::invalid_argument("config field 'code_dim' must be positive");
  if (temporal_kernel == 0 || temporal_kernel % 2 == 0) {
    throw std::invalid_argument("config field 'temporal_kernel' must be odd");
  }
  const std::size_t div = std::size_t{1} << block_channels.size();
  if (window == 0 || window % div != 0) {
    throw std::invalid_argument("config field 'window' (" + std::to_string(window) + ") must be divisible by 2^" +
                                std::to_string(block_channels.size()));
  }
  for (std::size_t c : block_channels)
    if (c == 0) throw std::invalid_argument("config field 'block_channels' has a zero entry");
  skel.validate();
}

double AnnealSchedule::tau(std::size_t step) const {
  const double f = total_steps == 0 ? 1.0 : std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  if (shape == exponential) return start * std::pow(end / start, f);
  return start + (end - start) * f;
}

StgpDvae::StgpDvae(DvaeConfig config, SkeletonSpec skeleton, std::uint64_t seed)
    : config_(std::move(config)), skeleton_(std::move(skeleton)) {
  config_.validate(skeleton_);
  Rng rng(seed);
  const std::size_t nb = config_.block_channels.size();
  const std::size_t first_pool = nb - levels_used();
  std::size_t cin = config_.channels, level = 0;
  for (std::size_t i = 0; i < nb; ++i) {
    const std::size_t cout = config_.block_channels[i];
    const std::string name = "dvae/encoder/block" + std::to_string(i);
    Block b;
    b.in_level = level;
    b.out_level = i >= first_pool ? level + 1 : level;
    b.spatial = Linear(store_, name + "/spatial", cin, cout, rng, false);
    b.spatial_bn = BatchNorm(store_, name + "/spatial_bn", cout, config_.bn_momentum);
    b.project = cin != cout;
    if (b.project) b.residual = Linear(store_, name + "/residual", cin, cout, rng, false);
    b.temporal = Linear(store_, name + "/temporal", config_.temporal_kernel * cout, cout, rng, false);
    b.temporal_bn = BatchNorm(store_, name + "/temporal_bn", cout, config_.bn_momentum);
    enc_.push_back(std::move(b));
    cin = cout;
    level = enc_.back().out_level;
  }
  enc_pool_bn_ = BatchNorm(store_, "dvae/encoder/pool_bn", cin, config_.bn_momentum);
  enc_head_ = Linear(store_, "dvae/encoder/head", cin, config_.codebook_size, rng);
  codebook_ = store_.add("dvae/codebook", normal_init({config_.codebook_size, config_.code_dim}, 1.0, rng));

  const std::size_t coarse = frames_after(nb) * vertices_after(nb);
  dec_input_ = Linear(store_, "dvae/decoder/input", config_.code_dim, coarse * cin, rng);
  for (std::size_t i = 0; i < nb; ++i) {
    const Block& mirror = enc_[nb - 1 - i];
    const std::size_t cout = config_.block_channels[nb - 1 - i];
    const std::string name = "dvae/decoder/block" + std::to_string(i);
    Block b;
    b.in_level = mirror.out_level;
    b.out_level = mirror.in_level;
    b.position = store_.add(name + "/position",
                            Tensor::zeros({frames_after(nb - 1 - i) * skeleton_.vertices_at(b.out_level), cin}));
    b.spatial = Linear(store_, name + "/spatial", cin, cout, rng, false);
    b.spatial_bn = BatchNorm(store_, name + "/spatial_bn", cout, config_.bn_momentum);
    b.project = cin != cout;
    if (b.project) b.residual = Linear(store_, name + "/residual", cin, cout, rng, false);
    b.temporal = Linear(store_, name + "/temporal", config_.temporal_kernel * cout, cout, rng, false);
    b.temporal_bn = BatchNorm(store_, name + "/temporal_bn", cout, config_.bn_momentum);
    dec_.push_back(std::move(b));
    cin = cout;
  }
  dec_head_ = Linear(store_, "dvae/decoder/head", cin, config_.channels, rng);
  // Residual ReLU stages accumulate positive features, so a random head
  // starts far from the data; start from the zero map instead.
  dec_head_.weight.mutable_value().fill(0.0);
}

std::size_t StgpDvae::levels_used() const {
  return std::min(config_.block_channels.size(), skeleton_.pooling_levels.size());
}

std::size_t StgpDvae::frames_after(std::size_t b) const { return config_.window >> b; }

std::size_t StgpDvae::vertices_after(std::size_t b) const {
  return b == 0 ? skeleton_.V : skeleton_.vertices_at(enc_.at(b - 1).out_level);
}

StgpDvae::Encoded StgpDvae::encode(const Var& x, std::size_t batch, bool training) const {
  const std::size_t L = config_.window, V = skeleton_.V, C = config_.channels;
  if (x.shape() != Shape{batch * L * V, C}) {
    throw ShapeError("encode: expected " + shape_str({batch * L * V, C}) + " for " + std::to_string(batch) +
                     " segments, got " + shape_str(x.shape()));
  }
  Var h = x;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    const Block& b = enc_[i];
    const std::size_t T = frames_after(i);
    const std::size_t vin = skeleton_.vertices_at(b.in_level);
    Dense adj = normalized_adjacency(vin, skeleton_.edges_at(b.in_level));
    Var skip = h;
    if (b.out_level != b.in_level) {
      const Dense pool = pooling_matrix(skeleton_.pooling_levels[b.in_level], vin);
      adj = product(pool, adj);
      skip = ops::mix_rows(h, vertex_mix(batch * T, pool));
    }
    if (b.project) skip = b.residual(skip);
    Var s = ops::matmul(ops::mix_rows(h, vertex_mix(batch * T, adj)), b.spatial.weight);
    Var h1 = add_residual(ops::relu(b.spatial_bn(s, training)), skip);

    const std::size_t vout = skeleton_.vertices_at(b.out_level);
    Var t = ops::matmul(ops::gather_rows(h1, temporal_taps(batch, T, vout, config_.temporal_kernel, 2)),
                        b.temporal.weight);
    h = add_residual(ops::relu(b.temporal_bn(t, training)), ops::mix_rows(h1, temporal_avg2(batch, T, vout)));
  }
  const std::size_t nb = enc_.size();
  Var pooled = enc_pool_bn_(ops::mix_rows(h, segment_mean(batch, frames_after(nb) * vertices_after(nb))), training);
  return {pooled, enc_head_(pooled)};
}

Var StgpDvae::decode(const Var& z, bool training) const {
  if (z.shape().size() != 2 || z.shape()[1] != config_.code_dim) {
    throw ShapeError("decode: expected [B, " + std::to_string(config_.code_dim) + "], got " + shape_str(z.shape()));
  }
  const std::size_t batch = z.shape()[0], nb = enc_.size();
  std::size_t T = frames_after(nb);
  Var h = dec_input_(z);
  h = ops::reshape(h, {batch * T * vertices_after(nb), config_.block_channels.back()});
  for (const Block& b : dec_) {
    const std::size_t vin = skeleton_.vertices_at(b.in_level), vout = skeleton_.vertices_at(b.out_level);
    std::vector<std::size_t> owner(vout);
    std::iota(owner.begin(), owner.end(), std::size_t{0});
    if (b.in_level != b.out_level) {
      const Partition& p = skeleton_.pooling_levels[b.out_level];
      for (std::size_t g = 0; g < p.size(); ++g)
        for (std::size_t m : p[g]) owner[m] = g;
    }
    Var xu = ops::mix_rows(h, upsample(batch, T, vin, owner));
    T *= 2;
    xu = ops::add(xu, ops::gather_rows(b.position, tile_rows(batch, T * vout)));
    const Dense adj = normalized_adjacency(vout, skeleton_.edges_at(b.out_level));
    Var s = ops::matmul(ops::mix_rows(xu, vertex_mix(batch * T, adj)), b.spatial.weight);
    Var h1 = add_residual(ops::relu(b.spatial_bn(s, training)), b.project ? b.residual(xu) : xu);
    Var t = ops::matmul(ops::gather_rows(h1, temporal_taps(batch, T, vout, config_.temporal_kernel, 1)),
                        b.temporal.weight);
    h = add_residual(ops::relu(b.temporal_bn(t, training)), h1);
  }
  return dec_head_(h);
}

Tensor stack_segments(std::span<const Tensor> segments) {
  if (segments.empty()) throw std::invalid_argument("stack_segments: no segments");
  const Shape& s0 = segments[0].shape();
  if (s0.size() != 3) throw ShapeError("segment must be [L,V,C], got " + shape_str(s0));
  std::vector<double> data;
  data.reserve(segments.size() * segments[0].size());
  for (const Tensor& s : segments) {
    if (s.shape() != s0) throw ShapeError("segments differ in shape: " + shape_str(s0) + " vs " + shape_str(s.shape()));
    data.insert(data.end(), s.vec().begin(), s.vec().end());
  }
  return Tensor({segments.size() * s0[0] * s0[1], s0[2]}, std::move(data));
}

Tensor StgpDvae::logits(std::span<const Tensor> segments) const {
  NoGradGuard guard;
  return encode(Var(stack_segments(segments)), segments.size(), false).logits.value();
}

Tensor StgpDvae::features(std::span<const Tensor> segments) const {
  NoGradGuard guard;
  return encode(Var(stack_segments(segments)), segments.size(), false).features.value();
}

std::vector<int> StgpDvae::tokenize(std::span<const Tensor> segments) const {
  const Tensor h = logits(segments);
  const std::size_t K = config_.codebook_size;
  std::vector<int> ids;
  for (std::size_t b = 0; b < segments.size(); ++b) ids.push_back(svq::tokenize(h.data().subspan(b * K, K)));
  return ids;
}

Tensor StgpDvae::decode_tokens(std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("decode_tokens: no tokens");
  const std::size_t K = config_.codebook_size, D = config_.code_dim;
  Tensor z({ids.size(), D});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= K) {
      throw std::out_of_range("token " + std::to_string(ids[i]) + " is not a codebook index (K=" + std::to_string(K) + ")");
    }
    std::copy_n(codebook_.value().ptr() + static_cast<std::size_t>(ids[i]) * D, D, z.ptr() + i * D);
  }
  NoGradGuard guard;
  const Tensor out = decode(Var(z), false).value();
  return out.reshaped({ids.size() * config_.window, skeleton_.V, config_.channels});
}

void StgpDvae::set_bn_momentum(double m) {
  for (auto* blocks : {&enc_, &dec_})
    for (Block& b : *blocks) b.spatial_bn.momentum = b.temporal_bn.momentum = m;
  enc_pool_bn_.momentum = m;
}

void StgpDvae::recalibrate_batch_norm(std::span<const Tensor> segments, std::size_t batch) {
  if (segments.empty() || batch == 0) throw std::invalid_argument("recalibrate_batch_norm: nothing to calibrate on");
  NoGradGuard guard;
  std::size_t n = 0;
  for (std::size_t s = 0; s < segments.size(); s += batch, ++n) {
    const auto part = segments.subspan(s, std::min(batch, segments.size() - s));
    set_bn_momentum(1.0 / static_cast<double>(n + 1));
    encode(Var(stack_segments(part)), part.size(), true);
  }
  set_bn_momentum(config_.bn_momentum);
  const std::vector<int> ids = tokenize(segments);
  const std::size_t D = config_.code_dim;
  n = 0;
  for (std::size_t s = 0; s < ids.size(); s += batch, ++n) {
    const std::size_t m = std::min(batch, ids.size() - s);
    Tensor z({m, D});
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(codebook_.value().ptr() + static_cast<std::size_t>(ids[s + i]) * D, D, z.ptr() + i * D);
    set_bn_momentum(1.0 / static_cast<double>(n + 1));
    decode(Var(z), true);
  }
  set_bn_momentum(config_.bn_momentum);
}

Var gumbel_softmax(const Var& h, double tau, const Tensor& gumbel) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: tau must be positive, got " + std::to_string(tau));
  if (gumbel.shape() != h.shape()) {
    throw ShapeError("gumbel_softmax: noise " + shape_str(gumbel.shape()) + " vs logits " + shape_str(h.shape()));
  }
  return ops::softmax_rows(ops::scale(ops::add_const(ops::log_softmax_rows(h), gumbel), 1.0 / tau));
}

Var gumbel_softmax(const Var& h, double tau, Rng& rng) { return gumbel_softmax(h, tau, sample_gumbel(h.shape(), rng)); }

Var quantize(const Var& w, const Var& codebook) { return ops::matmul(w, codebook); }

int tokenize(std::span<const double> h) {
  if (h.empty()) throw std::invalid_argument("tokenize: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[best]) best = i;
  return static_cast<int>(best);
}

Var recon_loss(const Var& y, const Var& y_hat, std::size_t frames) {
  if (y.shape() != y_hat.shape()) {
    throw ShapeError("recon_loss: " + shape_str(y.shape()) + " vs " + shape_str(y_hat.shape()));
  }
  if (frames == 0) throw std::invalid_argument("recon_loss: zero frames");
  return ops::scale(ops::sum(ops::square(ops::sub(y, y_hat))), 1.0 / static_cast<double>(frames));
}

Var diversity_loss(const Var& w) { return ops::sum(ops::xlogx(ops::mean_rows(w))); }

DvaeLoss dvae_loss(const StgpDvae& model, const Var& x, std::size_t batch, double tau, const Tensor& gumbel,
                   double alpha, bool training) {
  if (alpha < 0.0) throw std::invalid_argument("dvae_loss: alpha must be >= 0");
  const StgpDvae::Encoded e = model.encode(x, batch, training);
  const Var w = gumbel_softmax(e.logits, tau, gumbel);
  const Var y_hat = model.decode(quantize(w, model.codebook()), training);
  const Var rec = recon_loss(x, y_hat, batch * model.config().window);
  const Var div = diversity_loss(w);
  DvaeLoss out;
  out.total = alpha == 0.0 ? rec : ops::add(rec, ops::scale(div, alpha));
  out.recon = rec.item();
  out.diversity = div.item();
  return out;
}

double codebook_perplexity(std::span<const int> tokens, std::size_t K) {
  if (tokens.empty()) return 0.0;
  std::vector<double> counts(K, 0.0);
  for (int t : tokens) counts.at(static_cast<std::size_t>(t)) += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c == 0.0) continue;
    const double p = c / static_cast<double>(tokens.size());
    h -= p * std::log(p);
  }
  return std::exp(h);
}

double min_code_separation(const Tensor& codebook) {
  const std::size_t K = codebook.dim(0), D = codebook.dim(1);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) {
      double sq = 0.0;
      for (std::size_t d = 0; d < D; ++d) sq += std::pow(codebook[i * D + d] - codebook[j * D + d], 2);
      best = std::min(best, std::sqrt(sq));
    }
  return best;
}

DvaeTrainLog train_dvae(StgpDvae& model, std::span<const Tensor> segments, const DvaeTrainConfig& config, Rng& rng) {
  if (segments.empty()) throw std::invalid_argument("train_dvae: no training segments");
  if (config.batch == 0) throw std::invalid_argument("train_dvae: batch must be positive");
  AnnealSchedule schedule = config.anneal;
  if (schedule.total_steps == 0) schedule.total_steps = config.steps;
  ParamStore& store = model.store();
  store.set_trainable(true);
  AdamW opt(store.trainable(), config.optimizer);
  const std::size_t K = model.config().codebook_size;
  const std::size_t B = std::min(config.batch, segments.size());

  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  DvaeTrainLog log;
  NamedTensors snapshot = store.state();
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Tensor> batch;
    for (std::size_t i = 0; i < B; ++i) {
      if (cursor == order.size()) {
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        cursor = 0;
      }
      batch.push_back(segments[order[cursor++]]);
    }
    const double tau = schedule.tau(step);
    opt.config().lr = scheduled_lr(config.optimizer.lr, step, config.steps, config.cosine_decay, config.lr_floor);
    const Tensor g = sample_gumbel({B, K}, rng);
    try {
      Graph graph;
      opt.zero_grad();
      const DvaeLoss loss = dvae_loss(model, Var(stack_segments(batch)), B, tau, g, config.alpha, true);
      graph.backward(loss.total);
      opt.step();
      log.recon_per_step.push_back(loss.recon);
      log.final_loss = loss.total.item();
      if ((config.log_every && step % config.log_every == 0) || step + 1 == config.steps) {
        log.entries.push_back({step, tau, loss.total.item(), loss.recon, loss.diversity});
      }
    } catch (const NumericError& e) {
      store.load(snapshot);
      throw DivergenceError(step, e.what());
    }
    if (config.checkpoint_every && (step + 1) % config.checkpoint_every == 0) {
      snapshot = store.state();
      if (config.on_checkpoint) config.on_checkpoint(step + 1);
    }
  }
  if (config.recalibrate) model.recalibrate_batch_norm(segments);
  store.set_trainable(false);
  return log;
}

}  // namespace svq
