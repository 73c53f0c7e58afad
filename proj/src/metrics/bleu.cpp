#include "svq/metrics/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace svq {

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::map<std::vector<std::string>, std::size_t> ngrams(const std::vector<std::string>& w, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[std::vector<std::string>(w.begin() + i, w.begin() + i + n)];
  return out;
}

}  // namespace

BleuStats bleu_stats(std::span<const std::string> candidates, std::span<const std::string> references) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(candidates.size()) + " candidates for " +
                                std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw std::invalid_argument("bleu: empty corpus");
  BleuStats s;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto c = words(candidates[k]), r = words(references[k]);
    s.cand_len += c.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cn = ngrams(c, n), rn = ngrams(r, n);
      for (const auto& [g, count] : cn) {
        s.totals[n - 1] += count;
        const auto it = rn.find(g);
        if (it != rn.end()) s.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  return s;
}

double bleu4(const BleuStats& s, bool smooth) {
  if (s.cand_len == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(s.matches[n]), t = static_cast<double>(s.totals[n]);
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_p += 0.25 * std::log(m / t);
  }
  const double c = static_cast<double>(s.cand_len), r = static_cast<double>(s.ref_len);
  const double log_bp = c > r ? 0.0 : 1.0 - r / c;
  return std::exp(log_bp + log_p);
}

double bleu4(std::span<const std::string> candidates, std::span<const std::string> references, bool smooth) {
  return bleu4(bleu_stats(candidates, references), smooth);
}

}  // namespace svq
