#include "svq/gen/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace svq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> next_one(const NextLogProbs& next, const std::vector<int>& prefix) {
  auto out = next({prefix});
  if (out.size() != 1) throw std::logic_error("scorer returned " + std::to_string(out.size()) + " rows for 1 prefix");
  return std::move(out[0]);
}

bool better(const Hypothesis& a, const Hypothesis& b, double lp) {
  return hypothesis_score(a, lp) > hypothesis_score(b, lp);
}

void check_len(std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("max_len must be >= 2 (bos plus one token), got " + std::to_string(max_len));
}

}  // namespace

double hypothesis_score(const Hypothesis& h, double length_penalty) {
  if (length_penalty == 0.0) return h.log_prob;
  const double n = static_cast<double>(h.ids.size() > 1 ? h.ids.size() - 1 : 1);
  return h.log_prob / std::pow(n, length_penalty);
}

Hypothesis greedy_search(const NextLogProbs& next, int bos, int eos, std::size_t max_len) {
  check_len(max_len);
  Hypothesis h;
  h.ids = {bos};
  while (true) {
    if (h.ids.size() == max_len) {
      h.finished = h.truncated = true;
      return h;
    }
    const std::vector<double> lp = next_one(next, h.ids);
    std::size_t best = 0;
    for (std::size_t i = 1; i < lp.size(); ++i)
      if (lp[i] > lp[best]) best = i;
    if (lp.empty() || lp[best] == kNegInf) throw std::runtime_error("greedy_search: no allowed continuation");
    h.ids.push_back(static_cast<int>(best));
    h.log_prob += lp[best];
    if (static_cast<int>(best) == eos) {
      h.finished = true;
      return h;
    }
  }
}

BeamResult beam_search(const NextLogProbs& next, int bos, int eos, const DecodeOptions& options) {
  if (options.beam == 0) throw std::invalid_argument("beam size must be >= 1");
  check_len(options.max_len);
  const double lp = options.length_penalty;
  std::vector<Hypothesis> live(1), done;
  live[0].ids = {bos};

  while (!live.empty()) {
    if (live[0].ids.size() == options.max_len) {
      for (Hypothesis& h : live) {
        h.finished = h.truncated = true;
        done.push_back(std::move(h));
      }
      live.clear();
      break;
    }
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(live.size());
    for (const Hypothesis& h : live) prefixes.push_back(h.ids);
    const auto scores = next(prefixes);
    if (scores.size() != live.size()) throw std::logic_error("scorer row count does not match prefix count");

    // Parents in rank order, tokens ascending; the stable sort keeps that
    // order among equal scores, so beam 1 breaks ties exactly like greedy.
    std::vector<Hypothesis> cand;
    for (std::size_t p = 0; p < live.size(); ++p) {
      for (std::size_t t = 0; t < scores[p].size(); ++t) {
        if (scores[p][t] == kNegInf) continue;
        Hypothesis h;
        h.ids = live[p].ids;
        h.ids.push_back(static_cast<int>(t));
        h.log_prob = live[p].log_prob + scores[p][t];
        h.finished = static_cast<int>(t) == eos;
        cand.push_back(std::move(h));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [&](const Hypothesis& a, const Hypothesis& b) { return better(a, b, lp); });
    if (cand.size() > options.beam) cand.resize(options.beam);

    live.clear();
    for (Hypothesis& h : cand) (h.finished ? done : live).push_back(std::move(h));

    // Log-probabilities only fall as tokens append, so without a length
    // penalty no live hypothesis can overtake a completed one that already
    // scores at least as well.
    if (lp == 0.0 && !done.empty() && !live.empty()) {
      double best_done = kNegInf;
      for (const Hypothesis& h : done) best_done = std::max(best_done, h.log_prob);
      if (best_done >= live[0].log_prob) break;
    }
  }
  if (done.empty()) throw std::runtime_error("beam_search: no hypothesis completed");
  std::stable_sort(done.begin(), done.end(), [&](const Hypothesis& a, const Hypothesis& b) { return better(a, b, lp); });
  if (done.size() > options.beam) done.resize(options.beam);
  BeamResult out;
  out.best = done[0];
  out.top = std::move(done);
  return out;
}

Hypothesis exhaustive_search(const NextLogProbs& next, int bos, int eos, std::size_t max_len, double length_penalty) {
  check_len(max_len);
  Hypothesis best;
  bool found = false;
  std::vector<Hypothesis> stack(1);
  stack[0].ids = {bos};
  auto offer = [&](const Hypothesis& h) {
    if (!found || better(h, best, length_penalty)) {
      best = h;
      found = true;
    }
  };
  while (!stack.empty()) {
    Hypothesis h = std::move(stack.back());
    stack.pop_back();
    if (h.ids.size() == max_len) {
      h.finished = h.truncated = true;
      offer(h);
      continue;
    }
    const std::vector<double> lp = next_one(next, h.ids);
    // push in reverse so lower ids are visited first
    for (std::size_t t = lp.size(); t-- > 0;) {
      if (lp[t] == kNegInf) continue;
      Hypothesis c = h;
      c.ids.push_back(static_cast<int>(t));
      c.log_prob += lp[t];
      if (static_cast<int>(t) == eos) {
        c.finished = true;
        offer(c);
      } else {
        stack.push_back(std::move(c));
      }
    }
  }
  if (!found) throw std::runtime_error("exhaustive_search: no complete sequence");
  return best;
}

}  // namespace svq
