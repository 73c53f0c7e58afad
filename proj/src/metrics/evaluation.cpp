#include "svq/metrics/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace svq {

nlohmann::json EvalReport::to_json() const {
  return {{"fgd", fgd},     {"dtw_mje", dtw_mje}, {"dtw", dtw}, {"bleu4", bleu4}, {"bleu4_ground_truth", bleu4_ground_truth},
          {"n", n},         {"warnings", warnings}};
}

EvalReport evaluate(std::span<const PoseSequence> generated, std::span<const EvalItem> items, const StgpDvae& dvae,
                    const BackTranslator& bt, unsigned threads) {
  if (generated.size() != items.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(generated.size()) + " generated sequences for " +
                                std::to_string(items.size()) + " items");
  }
  if (items.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  if (!bt.trained()) throw std::logic_error("evaluate: the back-translator has not been trained");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });

  EvalReport r;
  r.n = items.size();
  const std::size_t L = dvae.config().window;
  std::vector<std::size_t> usable;
  for (std::size_t k : order) {
    if (generated[k].num_frames() >= L) usable.push_back(k);
  }
  if (usable.size() < items.size()) {
    r.warnings.push_back(std::to_string(items.size() - usable.size()) +
                         " generated sequences shorter than one window left out of fgd and dtw");
  }

  // DTW per pair; each worker writes its own slots so the reduction order
  // does not depend on scheduling
  std::vector<double> cost(usable.size()), norm(usable.size());
  const unsigned hw = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  const std::size_t nthreads = std::min<std::size_t>(hw, std::max<std::size_t>(usable.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < nthreads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < usable.size(); i += nthreads) {
        const std::size_t k = usable[i];
        const DtwResult d = dtw(generated[k], items[k].reference);
        cost[i] = d.cost;
        norm[i] = d.cost / static_cast<double>(d.path.size());
      }
    });
  }
  for (auto& t : pool) t.join();
  if (!usable.empty()) {
    for (std::size_t i = 0; i < usable.size(); ++i) {
      r.dtw += cost[i];
      r.dtw_mje += norm[i];
    }
    r.dtw /= static_cast<double>(usable.size());
    r.dtw_mje /= static_cast<double>(usable.size());
  } else {
    r.dtw = r.dtw_mje = std::numeric_limits<double>::quiet_NaN();
  }

  const Embedder embed = dvae_embedder(dvae);
  std::vector<std::vector<double>> real, gen;
  for (std::size_t k : order) real.push_back(embed(items[k].reference));
  for (std::size_t k : usable) gen.push_back(embed(generated[k]));
  if (gen.size() >= 2) {
    FgdResult f = fgd_features(real, gen);
    r.fgd = f.value;
    r.warnings.insert(r.warnings.end(), f.warnings.begin(), f.warnings.end());
  } else {
    r.fgd = std::numeric_limits<double>::quiet_NaN();
    r.warnings.push_back("fewer than 2 usable generated sequences; fgd undefined");
  }

  std::vector<PoseSequence> poses;
  std::vector<std::string> refs;
  for (std::size_t k : order) {
    poses.push_back(generated[k]);
    refs.push_back(items[k].text);
  }
  const BtScore b = back_translate_eval(poses, refs, bt);
  r.bleu4 = b.bleu4;
  r.bleu4_ground_truth = b.ground_truth_bleu4;
  return r;
}

std::vector<int> generate_tokens(const Generator& model, std::span<const int> text, const DecodeOptions& options) {
  const std::size_t K = model.config().codebook_size;
  std::vector<int> ids;
  if (options.beam == 1) {
    ids = model.greedy(text, options.max_len);
  } else {
    ids = model.beam(text, options).best.ids;
    if (ids.back() != model.config().eos()) ids.push_back(model.config().eos());
  }
  return token_body(ids, K);
}

std::vector<SweepRow> beam_sweep(const Generator& model, const StgpDvae& dvae, const BackTranslator& bt,
                                 std::span<const EvalItem> items, std::span<const std::size_t> beams,
                                 std::size_t max_len, unsigned threads) {
  std::vector<SweepRow> rows;
  for (std::size_t b : beams) {
    std::vector<PoseSequence> gen;
    for (const auto& it : items) gen.push_back(synthesize(dvae, generate_tokens(model, it.text_ids, {b, max_len, 0.0}), it.id));
    rows.push_back({b, evaluate(gen, items, dvae, bt, threads)});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "beam,fgd,dtw,dtw_mje,bleu4\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g\n", r.beam, r.report.fgd, r.report.dtw,
                  r.report.dtw_mje, r.report.bleu4);
    out += buf;
  }
  return out;
}

}  // namespace svq
