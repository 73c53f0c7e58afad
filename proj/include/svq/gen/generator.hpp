#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "svq/dvae/stgp.hpp"
#include "svq/gen/beam.hpp"
#include "svq/gen/transformer.hpp"
#include "svq/numerics/layers.hpp"
#include "svq/numerics/optim.hpp"
#include "svq/pose/pose.hpp"

namespace svq {

struct GeneratorConfig {
  std::size_t text_vocab = 0;      // BPE vocabulary size
  std::size_t codebook_size = 64;  // K; sign vocabulary is K + 2
  std::size_t d_model = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_text_len = 64;
  std::size_t max_sign_len = 64;  // including bos and eos
  double dropout = 0.1;
  // When nonzero, text tokens are looked up in a frozen [text_vocab, dim]
  // table of externally computed vectors and projected to d_model instead of
  // using a learned embedding.
  std::size_t injected_dim = 0;

  int bos() const { return static_cast<int>(codebook_size); }
  int eos() const { return static_cast<int>(codebook_size) + 1; }
  std::size_t sign_vocab() const { return codebook_size + 2; }
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// [bos, body..., eos]
std::vector<int> frame_tokens(std::span<const int> body, std::size_t K);
// Strips bos and a trailing eos; throws if the framing is wrong or an
// interior id is outside [0, K).
std::vector<int> token_body(std::span<const int> framed, std::size_t K);

struct GenBatch {
  std::vector<std::vector<int>> text;    // BPE ids
  std::vector<std::vector<int>> tokens;  // sign bodies z_1..z_M (unframed)
};

struct GenOutput {
  // One row per decoder position: input [bos, z_1..z_M] predicts
  // [z_1..z_M, eos]. Rows of all batch items are packed.
  Var logits;  // [N, K+2]
  Var latent;  // [N, K]
  std::vector<int> targets;
  // Rows whose prediction target is a segment token (every row but the one
  // predicting eos); these are aligned with the frozen encoder logits.
  std::vector<std::size_t> segment_rows;
};

// Pre-LN transformer encoder over text and causal decoder over sign tokens,
// with a next-token head over K+2 ids and a latent head onto the K encoder
// logits.
class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  // Dropout is active only when rng is given.
  GenOutput forward(const GenBatch& batch, Rng* rng = nullptr) const;

  // Encodes one text once and scores next tokens for any number of prefixes.
  // bos is never a valid continuation; its log-probability is -inf.
  NextLogProbs scorer(std::span<const int> text) const;

  std::vector<int> greedy(std::span<const int> text, std::size_t max_len) const;
  BeamResult beam(std::span<const int> text, const DecodeOptions& options) const;

  // Replaces the frozen text vector table (requires injected_dim > 0).
  void inject_text_embeddings(const Tensor& table);

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  ParamStore store_;
  Var text_embed_, text_injected_, sign_embed_;
  Linear text_project_;
  Seq2SeqCore core_;
  Linear head_, latent_head_;

  Var encode_text(const std::vector<std::vector<int>>& text, Rng* rng) const;
  Var decode_inputs(const std::vector<std::vector<int>>& inputs, const Var& memory,
                    const std::vector<std::size_t>& memory_lengths, Rng* rng) const;
};

// Mean next-token cross entropy over all positions of the batch.
Var ce_loss(const Var& logits, std::span<const int> targets);
// (1/M) sum_i ||h_i - h_hat_i||^2 over M segment rows; h carries no gradient.
Var latent_loss(const Var& h_hat, const Tensor& h);

struct GenLoss {
  Var total;
  double ce = 0.0;
  double latent = 0.0;
};
// L = [use_ce] * L_ce + beta * L_latent. latents holds, per batch item, the
// frozen encoder logits [M, K] of its segments.
GenLoss generator_loss(const Generator& model, const GenBatch& batch, std::span<const Tensor> latents, double beta,
                       bool use_ce = true, Rng* dropout_rng = nullptr);

// One training pair with everything the frozen dVAE contributes precomputed.
struct GenExample {
  std::string id;
  std::vector<int> text;
  std::vector<int> tokens;  // unframed body
  Tensor latents;           // [M, K] frozen encoder logits
};
// Segments the (preprocessed) pose, tokenizes and records the encoder logits.
// Refuses a dVAE whose parameters are still trainable.
GenExample make_example(const StgpDvae& dvae, std::string id, std::vector<int> text, const PoseSequence& pose);

// Each id becomes its codebook row decoded to L frames; the result has
// M*L frames. An empty body gives an empty sequence.
PoseSequence synthesize(const StgpDvae& dvae, std::span<const int> body, std::string id = "generated");

struct GenTrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 32;
  double beta = 0.001;
  bool use_ce = true;
  AdamWConfig optimizer{1e-3, 0.9, 0.98, 1e-8, 0.01};
  bool cosine_decay = true;
  double lr_floor = 0.05;
  std::size_t log_every = 100;
  // Validation cadence for checkpoint selection; 0 disables it.
  std::size_t eval_every = 500;
};

struct GenLogEntry {
  std::size_t step = 0;
  double loss = 0.0, ce = 0.0, latent = 0.0;
};
struct GenTrainLog {
  std::vector<GenLogEntry> entries;
  std::vector<double> ce_per_step;
  std::vector<std::pair<std::size_t, double>> validation;  // (step, score)
  std::size_t selected_step = 0;
  double final_loss = 0.0;
};

// Lower is better; index of the first minimum. Throws on an empty list.
std::size_t select_best(std::span<const double> scores);

// Teacher-forced training. When `validate` is given it is called every
// eval_every steps and after the last step; the parameters with the lowest
// score are restored at the end. Parameters are frozen afterwards.
GenTrainLog train_generator(Generator& model, std::span<const GenExample> examples, const GenTrainConfig& config,
                            Rng& rng, const std::function<double(const Generator&)>& validate = {});

}  // namespace svq
