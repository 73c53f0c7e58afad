#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "svq/gen/generator.hpp"
#include "svq/metrics/back_translator.hpp"
#include "svq/metrics/distance.hpp"

namespace svq {

struct EvalItem {
  std::string id;
  std::string text;
  std::vector<int> text_ids;  // generator BPE ids
  PoseSequence reference;     // preprocessed ground truth
};

struct EvalReport {
  double fgd = 0.0;
  double dtw = 0.0;      // mean optimal-path cost over pairs
  double dtw_mje = 0.0;  // mean path-normalized cost over pairs
  double bleu4 = 0.0;
  double bleu4_ground_truth = 0.0;
  std::size_t n = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

// generated[i] pairs with items[i]. Pairs are reduced in id order; the DTW
// terms run on `threads` workers. Generated sequences shorter than one dVAE
// window are left out of FGD and DTW (with a warning) but still scored by
// back-translation.
EvalReport evaluate(std::span<const PoseSequence> generated, std::span<const EvalItem> items, const StgpDvae& dvae,
                    const BackTranslator& bt, unsigned threads = 0);

// Sign-token body for one text. Beam 1 runs greedy decoding, which ranks
// candidates identically whatever the length penalty.
std::vector<int> generate_tokens(const Generator& model, std::span<const int> text, const DecodeOptions& options);

struct SweepRow {
  std::size_t beam = 0;
  EvalReport report;
};
std::vector<SweepRow> beam_sweep(const Generator& model, const StgpDvae& dvae, const BackTranslator& bt,
                                 std::span<const EvalItem> items, std::span<const std::size_t> beams,
                                 std::size_t max_len, unsigned threads = 0);
// Header "beam,fgd,dtw,dtw_mje,bleu4", one line per row.
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace svq
