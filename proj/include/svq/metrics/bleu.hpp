#pragma once

#include <span>
#include <string>
#include <vector>

namespace svq {

struct BleuStats {
  std::size_t matches[4] = {0, 0, 0, 0};  // clipped n-gram matches, n = 1..4
  std::size_t totals[4] = {0, 0, 0, 0};   // candidate n-gram counts
  std::size_t cand_len = 0, ref_len = 0;
};

// Whitespace tokenization; counts are summed over the corpus.
BleuStats bleu_stats(std::span<const std::string> candidates, std::span<const std::string> references);

// Corpus BLEU-4 with uniform weights and the brevity penalty. Without
// smoothing the score is 0 whenever some n-gram order has no match; with
// `smooth`, orders 2-4 use (m + 1) / (c + 1). Throws on an empty corpus or
// mismatched counts.
double bleu4(std::span<const std::string> candidates, std::span<const std::string> references, bool smooth = false);
double bleu4(const BleuStats& stats, bool smooth = false);

}  // namespace svq
