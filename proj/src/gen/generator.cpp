#include "svq/gen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "svq/numerics/ops.hpp"

namespace svq {

namespace {

void check_ids(std::span<const int> ids, std::size_t vocab, const char* what) {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::invalid_argument(std::string(what) + " id " + std::to_string(id) + " outside [0, " +
                                  std::to_string(vocab) + ")");
    }
}

}  // namespace

void GeneratorConfig::validate() const {
  if (text_vocab == 0) throw std::invalid_argument("config field 'text_vocab' must be positive");
  if (codebook_size < 1) throw std::invalid_argument("config field 'codebook_size' must be positive");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("config field 'heads' must divide 'd_model'");
  }
  if (layers == 0) throw std::invalid_argument("config field 'layers' must be positive");
  if (d_ff == 0) throw std::invalid_argument("config field 'd_ff' must be positive");
  if (max_text_len == 0) throw std::invalid_argument("config field 'max_text_len' must be positive");
  if (max_sign_len < 2) throw std::invalid_argument("config field 'max_sign_len' must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config field 'dropout' must be in [0, 1)");
}

std::vector<int> frame_tokens(std::span<const int> body, std::size_t K) {
  check_ids(body, K, "sign token");
  std::vector<int> out;
  out.reserve(body.size() + 2);
  out.push_back(static_cast<int>(K));
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(static_cast<int>(K) + 1);
  return out;
}

std::vector<int> token_body(std::span<const int> framed, std::size_t K) {
  if (framed.size() < 2 || framed.front() != static_cast<int>(K) || framed.back() != static_cast<int>(K) + 1) {
    throw std::invalid_argument("token sequence must start with bos and end with eos");
  }
  std::vector<int> body(framed.begin() + 1, framed.end() - 1);
  check_ids(body, K, "interior sign token");
  return body;
}

Generator::Generator(GeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  if (config_.injected_dim > 0) {
    text_injected_ = store_.add_buffer("gen/text/injected", Tensor::zeros({config_.text_vocab, config_.injected_dim}));
    text_project_ = Linear(store_, "gen/text/project", config_.injected_dim, d, rng);
  } else {
    text_embed_ = store_.add("gen/text/embed", normal_init({config_.text_vocab, d}, 1.0, rng));
  }
  sign_embed_ = store_.add("gen/sign/embed", normal_init({config_.sign_vocab(), d}, 1.0, rng));
  core_ = Seq2SeqCore(store_, "gen",
                      {d, config_.layers, config_.heads, config_.d_ff, config_.dropout,
                       std::max(config_.max_text_len, config_.max_sign_len)},
                      rng);
  head_ = Linear(store_, "gen/head", d, config_.sign_vocab(), rng);
  latent_head_ = Linear(store_, "gen/latent_head", d, config_.codebook_size, rng);
}

void Generator::inject_text_embeddings(const Tensor& table) {
  if (config_.injected_dim == 0) throw std::logic_error("inject_text_embeddings: model was built without injected_dim");
  if (table.shape() != Shape{config_.text_vocab, config_.injected_dim}) {
    throw ShapeError("inject_text_embeddings: expected " + shape_str({config_.text_vocab, config_.injected_dim}) +
                     ", got " + shape_str(table.shape()));
  }
  if (!table.all_finite()) throw NumericError("inject_text_embeddings: table has non-finite entries");
  text_injected_.mutable_value() = table;
}

Var Generator::encode_text(const std::vector<std::vector<int>>& text, Rng* rng) const {
  std::vector<int> flat;
  std::vector<std::size_t> lengths;
  for (const auto& t : text) {
    if (t.empty()) throw std::invalid_argument("text input is empty");
    if (t.size() > config_.max_text_len) {
      throw std::invalid_argument("text input has " + std::to_string(t.size()) + " tokens, limit is " +
                                  std::to_string(config_.max_text_len));
    }
    check_ids(t, config_.text_vocab, "text token");
    flat.insert(flat.end(), t.begin(), t.end());
    lengths.push_back(t.size());
  }
  const Var x =
      config_.injected_dim > 0 ? text_project_(ops::embedding(text_injected_, flat)) : ops::embedding(text_embed_, flat);
  return core_.encode(x, lengths, rng);
}

Var Generator::decode_inputs(const std::vector<std::vector<int>>& inputs, const Var& memory,
                             const std::vector<std::size_t>& memory_lengths, Rng* rng) const {
  std::vector<int> flat;
  std::vector<std::size_t> lengths;
  for (const auto& in : inputs) {
    if (in.size() + 1 > config_.max_sign_len) {
      throw std::invalid_argument("sign sequence of " + std::to_string(in.size() + 1) +
                                  " framed tokens exceeds max_sign_len " + std::to_string(config_.max_sign_len));
    }
    flat.insert(flat.end(), in.begin(), in.end());
    lengths.push_back(in.size());
  }
  return core_.decode(ops::embedding(sign_embed_, flat), lengths, memory, memory_lengths, rng);
}

GenOutput Generator::forward(const GenBatch& batch, Rng* rng) const {
  if (batch.text.size() != batch.tokens.size()) {
    throw std::invalid_argument("batch has " + std::to_string(batch.text.size()) + " texts but " +
                                std::to_string(batch.tokens.size()) + " token sequences");
  }
  if (batch.text.empty()) throw std::invalid_argument("empty batch");
  const Var memory = encode_text(batch.text, rng);
  std::vector<std::size_t> memory_lengths;
  for (const auto& t : batch.text) memory_lengths.push_back(t.size());

  GenOutput out;
  std::vector<std::vector<int>> inputs;
  std::size_t row = 0;
  for (const auto& body : batch.tokens) {
    check_ids(body, config_.codebook_size, "sign token");
    std::vector<int> in{config_.bos()};
    in.insert(in.end(), body.begin(), body.end());
    inputs.push_back(std::move(in));
    for (std::size_t i = 0; i < body.size(); ++i) out.segment_rows.push_back(row + i);
    out.targets.insert(out.targets.end(), body.begin(), body.end());
    out.targets.push_back(config_.eos());
    row += body.size() + 1;
  }
  const Var h = decode_inputs(inputs, memory, memory_lengths, rng);
  out.logits = head_(h);
  out.latent = latent_head_(h);
  return out;
}

NextLogProbs Generator::scorer(std::span<const int> text) const {
  std::vector<std::vector<int>> t{std::vector<int>(text.begin(), text.end())};
  Var memory;
  {
    NoGradGuard guard;
    memory = encode_text(t, nullptr);
  }
  const std::size_t mlen = text.size(), V = config_.sign_vocab();
  const int bos = config_.bos();
  return [this, memory, mlen, V, bos](const std::vector<std::vector<int>>& prefixes) {
    NoGradGuard guard;
    std::vector<std::vector<double>> out;
    if (prefixes.empty()) return out;
    // every prefix attends to its own copy of the single text memory
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < prefixes.size(); ++p)
      for (std::size_t r = 0; r < mlen; ++r) rows.push_back(r);
    const Var mem = ops::select_rows(memory, rows);
    const Var h = decode_inputs(prefixes, mem, std::vector<std::size_t>(prefixes.size(), mlen), nullptr);
    std::vector<std::size_t> last;
    std::size_t r = 0;
    for (const auto& p : prefixes) {
      r += p.size();
      last.push_back(r - 1);
    }
    const Tensor lp = ops::log_softmax_rows(head_(ops::select_rows(h, last))).value();
    for (std::size_t i = 0; i < prefixes.size(); ++i) {
      std::vector<double> row(lp.ptr() + i * V, lp.ptr() + (i + 1) * V);
      row[static_cast<std::size_t>(bos)] = -std::numeric_limits<double>::infinity();
      out.push_back(std::move(row));
    }
    return out;
  };
}

std::vector<int> Generator::greedy(std::span<const int> text, std::size_t max_len) const {
  Hypothesis h = greedy_search(scorer(text), config_.bos(), config_.eos(), std::min(max_len, config_.max_sign_len));
  if (h.truncated) h.ids.push_back(config_.eos());
  return h.ids;
}

BeamResult Generator::beam(std::span<const int> text, const DecodeOptions& options) const {
  DecodeOptions o = options;
  o.max_len = std::min(o.max_len, config_.max_sign_len);
  return beam_search(scorer(text), config_.bos(), config_.eos(), o);
}

Var ce_loss(const Var& logits, std::span<const int> targets) {
  if (logits.shape().size() != 2 || logits.shape()[0] != targets.size()) {
    throw ShapeError("ce_loss: " + std::to_string(targets.size()) + " targets for logits " + shape_str(logits.shape()));
  }
  check_ids(targets, logits.shape()[1], "target");
  return ops::cross_entropy_rows(logits, targets);
}

Var latent_loss(const Var& h_hat, const Tensor& h) {
  if (h_hat.shape() != h.shape() || h.shape().size() != 2) {
    throw ShapeError("latent_loss: predicted " + shape_str(h_hat.shape()) + " vs encoder " + shape_str(h.shape()));
  }
  if (h.dim(0) == 0) throw ShapeError("latent_loss: no segments");
  return ops::scale(ops::sum(ops::square(ops::sub(h_hat, Var(h)))), 1.0 / static_cast<double>(h.dim(0)));
}

GenLoss generator_loss(const Generator& model, const GenBatch& batch, std::span<const Tensor> latents, double beta,
                       bool use_ce, Rng* dropout_rng) {
  if (beta < 0.0) throw std::invalid_argument("generator_loss: beta must be >= 0");
  if (!use_ce && beta == 0.0) throw std::invalid_argument("generator_loss: both loss terms disabled");
  if (latents.size() != batch.tokens.size()) throw std::invalid_argument("generator_loss: one latent block per item");
  const GenOutput out = model.forward(batch, dropout_rng);
  const std::size_t K = model.config().codebook_size;
  GenLoss loss;
  const Var ce = ce_loss(out.logits, out.targets);
  loss.ce = ce.item();
  Var total = use_ce ? ce : Var();
  std::size_t M = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].shape() != Shape{batch.tokens[i].size(), K}) {
      throw ShapeError("generator_loss: item " + std::to_string(i) + " has " + std::to_string(batch.tokens[i].size()) +
                       " segments but latents " + shape_str(latents[i].shape()));
    }
    M += batch.tokens[i].size();
  }
  if (M > 0) {
    Tensor h({M, K});
    std::size_t r = 0;
    for (const Tensor& l : latents) {
      std::copy_n(l.ptr(), l.size(), h.ptr() + r * K);
      r += l.dim(0);
    }
    const Var lat = latent_loss(ops::select_rows(out.latent, out.segment_rows), h);
    loss.latent = lat.item();
    if (beta > 0.0) total = total.defined() ? ops::add(total, ops::scale(lat, beta)) : ops::scale(lat, beta);
  }
  if (!total.defined()) total = ops::scale(ce, 0.0);
  loss.total = total;
  return loss;
}

GenExample make_example(const StgpDvae& dvae, std::string id, std::vector<int> text, const PoseSequence& pose) {
  for (const Var& p : dvae.store().trainable())
    if (p.requires_grad()) throw std::logic_error("make_example: the dVAE must be trained and frozen first");
  const std::vector<SignSegment> segs = segment(pose, dvae.config().window);
  std::vector<Tensor> data;
  for (const auto& s : segs) data.push_back(s.data);
  GenExample ex;
  ex.id = std::move(id);
  ex.text = std::move(text);
  if (data.empty()) {
    ex.latents = Tensor({0, dvae.config().codebook_size});
    return ex;
  }
  ex.latents = dvae.logits(data);
  ex.tokens = dvae.tokenize(data);
  return ex;
}

PoseSequence synthesize(const StgpDvae& dvae, std::span<const int> body, std::string id) {
  const std::size_t V = dvae.skeleton().V, C = dvae.config().channels;
  check_ids(body, dvae.config().codebook_size, "sign token");
  if (body.empty()) return make_pose(std::move(id), 0, V, C);
  return pose_from_tensor(dvae.decode_tokens(body), std::move(id));
}

std::size_t select_best(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("select_best: no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[best]) best = i;
  return best;
}

GenTrainLog train_generator(Generator& model, std::span<const GenExample> examples, const GenTrainConfig& config,
                            Rng& rng, const std::function<double(const Generator&)>& validate) {
  if (examples.empty()) throw std::invalid_argument("train_generator: no training examples");
  if (config.batch == 0) throw std::invalid_argument("train_generator: batch must be positive");
  ParamStore& store = model.store();
  store.set_trainable(true);
  AdamW opt(store.trainable(), config.optimizer);
  const std::size_t B = std::min(config.batch, examples.size());
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  GenTrainLog log;
  std::vector<double> scores;
  std::vector<NamedTensors> states;
  auto run_validation = [&](std::size_t step) {
    const double s = validate(model);
    log.validation.emplace_back(step, s);
    // keep only the current best snapshot
    if (scores.empty() || s < scores[select_best(scores)]) {
      states.assign(1, store.state());
      log.selected_step = step;
    }
    scores.push_back(s);
  };

  for (std::size_t step = 0; step < config.steps; ++step) {
    GenBatch batch;
    std::vector<Tensor> latents;
    for (std::size_t i = 0; i < B; ++i) {
      if (cursor == order.size()) {
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        cursor = 0;
      }
      const GenExample& ex = examples[order[cursor++]];
      batch.text.push_back(ex.text);
      batch.tokens.push_back(ex.tokens);
      latents.push_back(ex.latents);
    }
    opt.config().lr = scheduled_lr(config.optimizer.lr, step, config.steps, config.cosine_decay, config.lr_floor);
    Rng drop = rng.split(step);
    Graph graph;
    opt.zero_grad();
    const GenLoss loss = generator_loss(model, batch, latents, config.beta, config.use_ce, &drop);
    graph.backward(loss.total);
    opt.step();
    log.ce_per_step.push_back(loss.ce);
    log.final_loss = loss.total.item();
    if ((config.log_every && step % config.log_every == 0) || step + 1 == config.steps) {
      log.entries.push_back({step, loss.total.item(), loss.ce, loss.latent});
    }
    if (validate && config.eval_every && (step + 1) % config.eval_every == 0 && step + 1 != config.steps) {
      run_validation(step + 1);
    }
  }
  store.set_trainable(false);
  if (validate) {
    run_validation(config.steps);
    store.load(states.front());
  }
  return log;
}

}  // namespace svq
