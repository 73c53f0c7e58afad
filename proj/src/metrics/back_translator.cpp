#include "svq/metrics/back_translator.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "svq/gen/beam.hpp"
#include "svq/metrics/bleu.hpp"
#include "svq/numerics/ops.hpp"

namespace svq {

void BackTranslatorConfig::validate() const {
  if (chunk == 0) throw std::invalid_argument("config field 'bt.chunk' must be positive");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("config field 'bt.heads' must divide 'bt.d_model'");
  }
  if (layers == 0) throw std::invalid_argument("config field 'bt.layers' must be positive");
  if (d_ff == 0) throw std::invalid_argument("config field 'bt.d_ff' must be positive");
  if (max_chunks == 0) throw std::invalid_argument("config field 'bt.max_chunks' must be positive");
  if (max_text_len < 2) throw std::invalid_argument("config field 'bt.max_text_len' must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config field 'bt.dropout' must be in [0, 1)");
  if (batch == 0) throw std::invalid_argument("config field 'bt.batch' must be positive");
}

nlohmann::json BackTranslatorConfig::to_json() const {
  return {{"chunk", chunk},
          {"d_model", d_model},
          {"layers", layers},
          {"heads", heads},
          {"d_ff", d_ff},
          {"dropout", dropout},
          {"max_chunks", max_chunks},
          {"max_text_len", max_text_len},
          {"steps", steps},
          {"batch", batch},
          {"lr", optimizer.lr},
          {"eval_every", eval_every}};
}

BackTranslatorConfig BackTranslatorConfig::from_json(const nlohmann::json& j) {
  BackTranslatorConfig c;
  c.chunk = j.value("chunk", c.chunk);
  c.d_model = j.value("d_model", c.d_model);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.max_chunks = j.value("max_chunks", c.max_chunks);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.optimizer.lr = j.value("lr", c.optimizer.lr);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.validate();
  return c;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  for (const auto& w : split_words(lowercase(text))) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

BackTranslator::BackTranslator(BackTranslatorConfig config, BpeModel bpe, std::size_t joints, std::size_t channels,
                               std::uint64_t seed)
    : config_(std::move(config)), bpe_(std::move(bpe)), joints_(joints), channels_(channels) {
  config_.validate();
  if (joints == 0 || channels == 0) throw std::invalid_argument("back-translator needs a joint layout");
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  in_proj_ = Linear(store_, "bt/input", config_.chunk * joints * channels, d, rng);
  text_embed_ = store_.add("bt/text/embed", normal_init({bpe_.size(), d}, 1.0, rng));
  core_ = Seq2SeqCore(store_, "bt",
                      {d, config_.layers, config_.heads, config_.d_ff, config_.dropout,
                       std::max(config_.max_chunks, config_.max_text_len)},
                      rng);
  head_ = Linear(store_, "bt/head", d, bpe_.size(), rng);
}

Tensor BackTranslator::chunk_features(const PoseSequence& pose) const {
  if (pose.joints != joints_ || pose.channels != channels_) {
    throw ShapeError("back-translator: pose '" + pose.id + "' has layout " + std::to_string(pose.joints) + "x" +
                     std::to_string(pose.channels) + ", expected " + std::to_string(joints_) + "x" +
                     std::to_string(channels_));
  }
  const std::size_t n = pose.num_frames() / config_.chunk;
  if (n > config_.max_chunks) {
    throw std::invalid_argument("back-translator: pose '" + pose.id + "' has " + std::to_string(n) +
                                " chunks, limit is " + std::to_string(config_.max_chunks));
  }
  const std::size_t width = config_.chunk * pose.frame_size();
  Tensor t({n, width});
  std::copy_n(pose.coords.data(), n * width, t.ptr());
  return t;
}

std::vector<int> BackTranslator::target_ids(const std::string& text) const {
  std::vector<int> ids = bpe_.encode(normalize_text(text));
  if (ids.size() > config_.max_text_len - 1) ids.resize(config_.max_text_len - 1);
  ids.push_back(BpeModel::eos);
  return ids;
}

Var BackTranslator::encode(std::span<const PoseSequence* const> poses, std::vector<std::size_t>& lengths,
                           Rng* rng) const {
  std::vector<Tensor> feats;
  std::size_t rows = 0;
  lengths.clear();
  for (const PoseSequence* p : poses) {
    feats.push_back(chunk_features(*p));
    if (feats.back().dim(0) == 0) throw std::invalid_argument("back-translator: pose '" + p->id + "' is shorter than one chunk");
    lengths.push_back(feats.back().dim(0));
    rows += feats.back().dim(0);
  }
  const std::size_t width = feats.front().dim(1);
  Tensor x({rows, width});
  std::size_t r = 0;
  for (const Tensor& f : feats) {
    std::copy_n(f.ptr(), f.size(), x.ptr() + r * width);
    r += f.dim(0);
  }
  return core_.encode(in_proj_(Var(x)), lengths, rng);
}

Var BackTranslator::loss(std::span<const TextPose* const> batch, Rng* rng) const {
  std::vector<const PoseSequence*> poses;
  for (const TextPose* p : batch) poses.push_back(&p->pose);
  std::vector<std::size_t> mem_lengths;
  const Var memory = encode(poses, mem_lengths, rng);
  std::vector<int> inputs, targets;
  std::vector<std::size_t> lengths;
  for (const TextPose* p : batch) {
    const std::vector<int> t = target_ids(p->text);
    inputs.push_back(BpeModel::bos);
    inputs.insert(inputs.end(), t.begin(), t.end() - 1);
    targets.insert(targets.end(), t.begin(), t.end());
    lengths.push_back(t.size());
  }
  const Var h = core_.decode(ops::embedding(text_embed_, inputs), lengths, memory, mem_lengths, rng);
  return ops::cross_entropy_rows(head_(h), targets);
}

std::string BackTranslator::translate(const PoseSequence& pose) const {
  if (pose.num_frames() < config_.chunk) return "";
  NoGradGuard guard;
  const PoseSequence* p = &pose;
  std::vector<std::size_t> mem_lengths;
  const Var memory = encode(std::span<const PoseSequence* const>(&p, 1), mem_lengths, nullptr);
  const std::size_t mlen = mem_lengths[0], V = bpe_.size();
  NextLogProbs next = [&](const std::vector<std::vector<int>>& prefixes) {
    std::vector<std::vector<double>> out;
    std::vector<std::size_t> rows;
    std::vector<int> flat;
    std::vector<std::size_t> lengths, last;
    for (const auto& pre : prefixes) {
      for (std::size_t r = 0; r < mlen; ++r) rows.push_back(r);
      flat.insert(flat.end(), pre.begin(), pre.end());
      lengths.push_back(pre.size());
      last.push_back(flat.size() - 1);
    }
    const Var h = core_.decode(ops::embedding(text_embed_, flat), lengths, ops::select_rows(memory, rows),
                               std::vector<std::size_t>(prefixes.size(), mlen), nullptr);
    const Tensor lp = ops::log_softmax_rows(head_(ops::select_rows(h, last))).value();
    for (std::size_t i = 0; i < prefixes.size(); ++i) {
      std::vector<double> row(lp.ptr() + i * V, lp.ptr() + (i + 1) * V);
      row[BpeModel::pad] = row[BpeModel::bos] = -std::numeric_limits<double>::infinity();
      out.push_back(std::move(row));
    }
    return out;
  };
  const Hypothesis h = greedy_search(next, BpeModel::bos, BpeModel::eos, config_.max_text_len);
  return bpe_.decode(h.ids);
}

std::vector<std::string> BackTranslator::translate_all(std::span<const PoseSequence> poses) const {
  std::vector<std::string> out;
  out.reserve(poses.size());
  for (const auto& p : poses) out.push_back(translate(p));
  return out;
}

double BackTranslator::score(std::span<const PoseSequence> poses, std::span<const std::string> texts) const {
  const std::vector<std::string> cand = translate_all(poses);
  std::vector<std::string> refs;
  for (const auto& t : texts) refs.push_back(normalize_text(t));
  return bleu4(cand, refs);
}

void BackTranslator::mark_trained(double validation_bleu) {
  trained_ = true;
  validation_bleu_ = validation_bleu;
  store_.set_trainable(false);
}

BtTrainLog BackTranslator::train(std::span<const TextPose> pairs, std::span<const TextPose> validation, Rng& rng) {
  if (pairs.empty()) throw std::invalid_argument("back-translator: no training pairs");
  if (validation.empty()) throw std::invalid_argument("back-translator: no validation pairs");
  store_.set_trainable(true);
  AdamW opt(store_.trainable(), config_.optimizer);
  std::vector<PoseSequence> val_poses;
  std::vector<std::string> val_texts;
  for (const auto& v : validation) {
    val_poses.push_back(v.pose);
    val_texts.push_back(v.text);
  }
  const std::size_t B = std::min(config_.batch, pairs.size());
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  BtTrainLog log;
  double best = -1.0;
  NamedTensors best_state;
  auto run_validation = [&](std::size_t step) {
    const double s = score(val_poses, val_texts);
    log.validation.emplace_back(step, s);
    if (s > best) {
      best = s;
      best_state = store_.state();
      log.selected_step = step;
    }
  };
  for (std::size_t step = 0; step < config_.steps; ++step) {
    std::vector<const TextPose*> batch;
    for (std::size_t i = 0; i < B; ++i) {
      if (cursor == order.size()) {
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        cursor = 0;
      }
      batch.push_back(&pairs[order[cursor++]]);
    }
    opt.config().lr = scheduled_lr(config_.optimizer.lr, step, config_.steps, true, 0.05);
    Rng drop = rng.split(step);
    Graph graph;
    opt.zero_grad();
    const Var l = loss(batch, &drop);
    graph.backward(l);
    opt.step();
    log.loss_per_step.push_back(l.item());
    if (config_.eval_every && (step + 1) % config_.eval_every == 0 && step + 1 != config_.steps) run_validation(step + 1);
  }
  run_validation(config_.steps);
  store_.load(best_state);
  mark_trained(best);
  return log;
}

BtScore back_translate_eval(std::span<const PoseSequence> generated, std::span<const std::string> references,
                            const BackTranslator& bt) {
  if (!bt.trained()) throw std::logic_error("back_translate_eval: the back-translator has not been trained");
  BtScore s;
  s.bleu4 = bt.score(generated, references);
  s.ground_truth_bleu4 = bt.validation_bleu();
  return s;
}

}  // namespace svq
