#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "svq/gen/transformer.hpp"
#include "svq/numerics/optim.hpp"
#include "svq/pose/pose.hpp"
#include "svq/text/bpe.hpp"

namespace svq {

struct BackTranslatorConfig {
  std::size_t chunk = 4;  // frames per encoder input step
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  std::size_t max_chunks = 256;
  std::size_t max_text_len = 48;  // decoder positions, bos and eos included
  // training
  std::size_t steps = 1500;
  std::size_t batch = 16;
  AdamWConfig optimizer{1e-3, 0.9, 0.98, 1e-8, 0.01};
  std::size_t eval_every = 250;  // 0: only after the last step

  void validate() const;
  nlohmann::json to_json() const;
  static BackTranslatorConfig from_json(const nlohmann::json& j);
};

struct TextPose {
  std::string text;
  PoseSequence pose;
};

struct BtTrainLog {
  std::vector<double> loss_per_step;
  std::vector<std::pair<std::size_t, double>> validation;  // (step, BLEU-4)
  std::size_t selected_step = 0;
};

// Pose-to-text model used only for scoring: consecutive `chunk`-frame
// blocks are flattened, projected to d_model and fed to a small encoder;
// the decoder emits BPE ids of its own vocabulary.
class BackTranslator {
 public:
  BackTranslator(BackTranslatorConfig config, BpeModel bpe, std::size_t joints, std::size_t channels,
                 std::uint64_t seed);
  BackTranslator(const BackTranslator&) = delete;
  BackTranslator& operator=(const BackTranslator&) = delete;

  // Fits on ground-truth pairs and keeps the parameters with the best BLEU-4
  // on `validation`. Marks the model trained.
  BtTrainLog train(std::span<const TextPose> pairs, std::span<const TextPose> validation, Rng& rng);

  // Greedy decode. Sequences shorter than one chunk translate to "".
  std::string translate(const PoseSequence& pose) const;
  std::vector<std::string> translate_all(std::span<const PoseSequence> poses) const;

  // Corpus BLEU-4 of translations against texts (lowercased, whitespace
  // normalized).
  double score(std::span<const PoseSequence> poses, std::span<const std::string> texts) const;

  Tensor chunk_features(const PoseSequence& pose) const;  // [n, chunk*V*C]

  bool trained() const { return trained_; }
  double validation_bleu() const { return validation_bleu_; }
  // Used when restoring from a checkpoint.
  void mark_trained(double validation_bleu);

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const BpeModel& bpe() const { return bpe_; }
  const BackTranslatorConfig& config() const { return config_; }
  std::size_t joints() const { return joints_; }
  std::size_t channels() const { return channels_; }

 private:
  BackTranslatorConfig config_;
  BpeModel bpe_;
  std::size_t joints_, channels_;
  ParamStore store_;
  Linear in_proj_;
  Var text_embed_;
  Seq2SeqCore core_;
  Linear head_;
  bool trained_ = false;
  double validation_bleu_ = 0.0;

  std::vector<int> target_ids(const std::string& text) const;
  Var encode(std::span<const PoseSequence* const> poses, std::vector<std::size_t>& lengths, Rng* rng) const;
  Var loss(std::span<const TextPose* const> batch, Rng* rng) const;
};

// Lowercased words joined by single spaces; the reference form for BLEU.
std::string normalize_text(const std::string& text);

struct BtScore {
  double bleu4 = 0.0;
  double ground_truth_bleu4 = 0.0;  // the back-translator's own validation score
};
// Refuses an untrained back-translator.
BtScore back_translate_eval(std::span<const PoseSequence> generated, std::span<const std::string> references,
                            const BackTranslator& bt);

}  // namespace svq
