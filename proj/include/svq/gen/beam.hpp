#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace svq {

// Next-token log-probabilities for each prefix (every prefix starts with bos).
// A -inf entry marks a token that may not follow that prefix.
using NextLogProbs = std::function<std::vector<std::vector<double>>(const std::vector<std::vector<int>>& prefixes)>;

struct Hypothesis {
  std::vector<int> ids;  // bos first; eos last once finished
  double log_prob = 0.0;
  bool finished = false;
  bool truncated = false;  // hit max_len without emitting eos
};

struct DecodeOptions {
  std::size_t beam = 1;
  // Upper bound on sequence length counting bos and eos: at most max_len - 1
  // tokens are generated after bos.
  std::size_t max_len = 32;
  // Score = log_prob / (generated tokens)^length_penalty; 0 ranks by raw
  // log-probability.
  double length_penalty = 0.0;
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> top;  // completed pool, best first, at most `beam` entries
};

double hypothesis_score(const Hypothesis& h, double length_penalty);

// Repeatedly appends the highest-probability token (lowest id on ties).
Hypothesis greedy_search(const NextLogProbs& next, int bos, int eos, std::size_t max_len);

// Length-synchronous beam search. Each step expands every live hypothesis by
// every allowed token and keeps the best `beam` candidates; candidates ending
// in eos retire to the completed pool. Stops once no live hypothesis can beat
// the best completed one (only decidable without a length penalty) or at
// max_len, where live hypotheses retire as truncated.
BeamResult beam_search(const NextLogProbs& next, int bos, int eos, const DecodeOptions& options);

// Enumerates every complete sequence up to max_len; the oracle for small
// vocabularies.
Hypothesis exhaustive_search(const NextLogProbs& next, int bos, int eos, std::size_t max_len,
                             double length_penalty = 0.0);

}  // namespace svq
