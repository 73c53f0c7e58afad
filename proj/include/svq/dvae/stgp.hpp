#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "svq/numerics/layers.hpp"
#include "svq/numerics/optim.hpp"
#include "svq/pose/skeleton.hpp"

namespace svq {

struct DvaeConfig {
  std::size_t window = 16;    // L
  std::size_t channels = 2;   // C
  std::size_t codebook_size = 64;  // K
  std::size_t code_dim = 32;       // D_c
  std::vector<std::size_t> block_channels{32, 32, 64, 64};
  std::size_t temporal_kernel = 3;
  double bn_momentum = 0.1;

  // Throws std::invalid_argument naming the offending field.
  void validate(const SkeletonSpec& skel) const;
};

struct AnnealSchedule {
  enum Shape { linear, exponential };
  double start = 0.9;
  double end = 0.1;
  std::size_t total_steps = 0;  // 0: the whole training run
  Shape shape = linear;

  // Clamped to `end` past total_steps.
  double tau(std::size_t step) const;
};

// Spatio-temporal graph pyramid encoder/decoder with a Gumbel-softmax
// codebook bottleneck. Activations are 2-D [rows, channels] with rows ordered
// (segment, frame, vertex); a batch of B segments enters as [B*L*V, C].
class StgpDvae {
 public:
  StgpDvae(DvaeConfig config, SkeletonSpec skeleton, std::uint64_t seed);
  StgpDvae(const StgpDvae&) = delete;
  StgpDvae& operator=(const StgpDvae&) = delete;

  struct Encoded {
    Var features;  // [B, block_channels.back()], mean-pooled before the logit head
    Var logits;    // [B, K]
  };
  Encoded encode(const Var& x, std::size_t batch, bool training) const;
  // z: [B, D_c] -> [B*L*V, C]
  Var decode(const Var& z, bool training) const;

  const Var& codebook() const { return codebook_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const DvaeConfig& config() const { return config_; }
  const SkeletonSpec& skeleton() const { return skeleton_; }
  std::size_t feature_dim() const { return config_.block_channels.back(); }
  std::size_t levels_used() const;

  // Time and vertex extent after encoder block b (b = 0 is the input).
  std::size_t frames_after(std::size_t b) const;
  std::size_t vertices_after(std::size_t b) const;

  // Inference helpers: batch-norm in eval mode, nothing recorded.
  Tensor logits(std::span<const Tensor> segments) const;    // [B, K]
  Tensor features(std::span<const Tensor> segments) const;  // [B, F]
  std::vector<int> tokenize(std::span<const Tensor> segments) const;
  // Hard codebook rows for the ids, decoded and concatenated: [M*L, V, C].
  Tensor decode_tokens(std::span<const int> ids) const;

  // Replaces running batch-norm statistics with population statistics: the
  // encoder over `segments`, the decoder over the hard codes those segments
  // tokenize to (the path inference takes).
  void recalibrate_batch_norm(std::span<const Tensor> segments, std::size_t batch = 64);

 private:
  struct Block {
    Linear spatial, residual, temporal;
    BatchNorm spatial_bn, temporal_bn;
    Var position;  // decoder only: [T*V, C_in] added after up-sampling
    bool project = false;
    std::size_t in_level = 0, out_level = 0;
  };
  DvaeConfig config_;
  SkeletonSpec skeleton_;
  ParamStore store_;
  std::vector<Block> enc_, dec_;
  // Standardizes pooled features across the batch; mean pooling leaves
  // segments nearly indistinguishable relative to the Gumbel noise otherwise.
  BatchNorm enc_pool_bn_;
  Linear enc_head_, dec_input_, dec_head_;
  Var codebook_;

  void set_bn_momentum(double m);
};

// Stacks [L,V,C] segments into the [B*L*V, C] row layout.
Tensor stack_segments(std::span<const Tensor> segments);

// w = softmax((log_softmax(h) + g) / tau), rowwise.
Var gumbel_softmax(const Var& h, double tau, const Tensor& gumbel);
Var gumbel_softmax(const Var& h, double tau, Rng& rng);
// z = w @ codebook
Var quantize(const Var& w, const Var& codebook);
// argmax, lowest index on ties
int tokenize(std::span<const double> h);

// Squared error summed over each frame's V*C coordinates, averaged over
// frames (and segments): y, y_hat are [B*L*V, C].
Var recon_loss(const Var& y, const Var& y_hat, std::size_t frames);
// sum_k p_k log p_k with p the batch mean of w: the negated entropy of
// codebook usage, so minimizing it spreads usage.
Var diversity_loss(const Var& w);

struct DvaeLoss {
  Var total;
  double recon = 0.0;
  double diversity = 0.0;
};
DvaeLoss dvae_loss(const StgpDvae& model, const Var& x, std::size_t batch, double tau, const Tensor& gumbel,
                   double alpha, bool training = true);

// exp(entropy) of the token histogram.
double codebook_perplexity(std::span<const int> tokens, std::size_t K);
// Minimum pairwise Euclidean distance between codebook rows.
double min_code_separation(const Tensor& codebook);

struct DvaeTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  // Desk-scale defaults; the full profile in the pipeline config restores
  // alpha 0.1, lr 1e-4 and a linear anneal.
  double alpha = 0.05;
  AnnealSchedule anneal{0.9, 0.1, 0, AnnealSchedule::exponential};  // total_steps 0 means `steps`
  AdamWConfig optimizer{5e-3, 0.9, 0.999, 1e-8, 0.01};
  // Cosine decay of the learning rate to lr * lr_floor over the run.
  bool cosine_decay = true;
  double lr_floor = 0.05;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 100;
  // Called with the step count after each periodic snapshot.
  std::function<void(std::size_t)> on_checkpoint;
  bool recalibrate = true;
};

struct DvaeLogEntry {
  std::size_t step = 0;
  double tau = 0.0, loss = 0.0, recon = 0.0, diversity = 0.0;
};
struct DvaeTrainLog {
  std::vector<DvaeLogEntry> entries;  // one per log_every steps plus the last
  std::vector<double> recon_per_step;
  double final_loss = 0.0;
};

// Thrown when a loss or gradient goes non-finite; parameters are rolled back
// to the last periodic snapshot first.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : NumericError("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

DvaeTrainLog train_dvae(StgpDvae& model, std::span<const Tensor> segments, const DvaeTrainConfig& config, Rng& rng);

}  // namespace svq
