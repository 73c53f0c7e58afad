#include "svq/pipeline/stages.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "svq/pipeline/checkpoint.hpp"
#include "svq/pipeline/selfcheck.hpp"
#include "svq/pose/io.hpp"
#include "svq/pose/synth.hpp"

namespace svq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// stream ids for Rng(seed).split(...)
enum Stream : std::uint64_t {
  s_rules = 1,
  s_corpus,
  s_dvae_init,
  s_dvae_train,
  s_gen_init,
  s_gen_train,
  s_bt_init,
  s_bt_train,
  s_gradcheck,
  s_ablate = 100,
};

std::uint64_t stream_seed(const PipelineConfig& c, std::uint64_t stream) { return Rng(c.seed).split(stream).next_u64(); }

std::string path_in(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string require_file(const std::string& dir, const char* name, const char* stage) {
  const std::string p = path_in(dir, name);
  if (!fs::exists(p)) throw PrerequisiteError(p, stage);
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_manifest(const std::string& dir, const std::string& command, const PipelineConfig& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    const StageTimer& timer) {
  json m;
  m["command"] = command;
  m["seed"] = config.seed;
  m["profile"] = config.profile;
  const json cj = config_to_json(config);
  m["config"] = cj;
  m["config_hash"] = fnv1a_hex(cj.dump());
  json in = json::object(), out = json::object();
  for (const auto& p : inputs) in[fs::path(p).filename().string()] = file_hash(p);
  for (const auto& p : outputs) out[fs::path(p).filename().string()] = file_hash(p);
  m["inputs"] = in;
  m["outputs"] = out;
  m["seconds"] = timer.seconds();
  fs::create_directories(fs::path(dir) / artifact::manifests);
  write_file((fs::path(dir) / artifact::manifests / (command + ".json")).string(), m.dump(2) + "\n");
}

std::vector<Tensor> segment_data(const PoseSequence& pose, std::size_t L) {
  std::vector<Tensor> out;
  for (auto& s : segment(pose, L)) out.push_back(std::move(s.data));
  return out;
}

Corpus read_split(const std::string& path, const std::string& split, std::uint64_t seed) {
  Corpus out;
  for (Sample& s : read_corpus(path))
    if (split == "all" || split_for(s.pose.id, seed) == split) out.push_back(std::move(s));
  return out;
}

std::vector<int> text_ids(const BpeModel& bpe, const std::string& text) { return bpe.encode(normalize_text(text)); }

void freeze(ParamStore& store) { store.set_trainable(false); }

Checkpoint read_kind(const std::string& path, const char* kind) {
  Checkpoint c = load_checkpoint(path);
  if (!c.config.contains("kind") || c.config["kind"] != kind) {
    throw CheckpointError(path + " is not a " + std::string(kind) + " checkpoint");
  }
  return c;
}

double finite_or_nan(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

// FGD of greedy generations against fixed real features; +inf when too few
// generations are long enough to embed.
double generation_fgd(const Generator& gen, const StgpDvae& dvae, const std::vector<EvalItem>& items,
                      const std::vector<std::vector<double>>& real, std::size_t max_len) {
  const Embedder embed = dvae_embedder(dvae);
  std::vector<std::vector<double>> fake;
  for (const auto& it : items) {
    const PoseSequence p = synthesize(dvae, generate_tokens(gen, it.text_ids, {1, max_len, 0.0}), it.id);
    if (p.num_frames() >= dvae.config().window) fake.push_back(embed(p));
  }
  if (fake.size() < 2 || real.size() < 2) return std::numeric_limits<double>::infinity();
  return fgd_features(real, fake).value;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) { return fnv1a_hex(read_file(path)); }

std::string split_for(const std::string& id, std::uint64_t seed) { return split_name(split_of(id, seed)); }

void save_dvae(const std::string& path, const StgpDvae& dvae, const PipelineConfig& config, const Rng& rng) {
  Checkpoint c;
  PipelineConfig stored = config;
  stored.dvae = dvae.config();
  c.config = {{"kind", "dvae"}, {"pipeline", config_to_json(stored)}, {"skeleton", skeleton_to_json(dvae.skeleton())}};
  c.rng = rng.state();
  c.tensors = dvae.store().state();
  save_checkpoint(path, c);
}

std::unique_ptr<StgpDvae> load_dvae(const std::string& path) {
  const Checkpoint c = read_kind(path, "dvae");
  const PipelineConfig cfg = config_from_json(c.config.at("pipeline"), "", false);
  auto m = std::make_unique<StgpDvae>(cfg.dvae, skeleton_from_json(c.config.at("skeleton")), 0);
  m->store().load(c.tensors);
  freeze(m->store());
  return m;
}

GeneratorConfig generator_config(const PipelineConfig& config, std::size_t text_vocab) {
  GeneratorConfig g = config.gen;
  g.text_vocab = text_vocab;
  g.codebook_size = config.dvae.codebook_size;
  return g;
}

void save_generator(const std::string& path, const Generator& gen, const PipelineConfig& config, const Rng& rng) {
  Checkpoint c;
  PipelineConfig stored = config;
  stored.gen = gen.config();
  stored.dvae.codebook_size = gen.config().codebook_size;
  c.config = {{"kind", "generator"}, {"pipeline", config_to_json(stored)}, {"text_vocab", gen.config().text_vocab}};
  c.rng = rng.state();
  c.tensors = gen.store().state();
  save_checkpoint(path, c);
}

std::unique_ptr<Generator> load_generator(const std::string& path) {
  const Checkpoint c = read_kind(path, "generator");
  const PipelineConfig cfg = config_from_json(c.config.at("pipeline"), "", false);
  auto g = std::make_unique<Generator>(generator_config(cfg, c.config.at("text_vocab").get<std::size_t>()), 0);
  g->store().load(c.tensors);
  freeze(g->store());
  return g;
}

void save_back_translator(const std::string& path, const BackTranslator& bt, const Rng& rng) {
  if (!bt.trained()) throw std::logic_error("refusing to save an untrained back-translator");
  Checkpoint c;
  c.config = {{"kind", "back_translator"},
              {"bt", bt.config().to_json()},
              {"bpe", bt.bpe().to_json()},
              {"joints", bt.joints()},
              {"channels", bt.channels()},
              {"validation_bleu", bt.validation_bleu()}};
  c.rng = rng.state();
  c.tensors = bt.store().state();
  save_checkpoint(path, c);
}

std::unique_ptr<BackTranslator> load_back_translator(const std::string& path) {
  const Checkpoint c = read_kind(path, "back_translator");
  auto bt = std::make_unique<BackTranslator>(BackTranslatorConfig::from_json(c.config.at("bt")),
                                             BpeModel::from_json(c.config.at("bpe")),
                                             c.config.at("joints").get<std::size_t>(),
                                             c.config.at("channels").get<std::size_t>(), 0);
  bt->store().load(c.tensors);
  bt->mark_trained(c.config.at("validation_bleu").get<double>());
  return bt;
}

std::vector<EvalItem> load_eval_items(const std::string& dir, const std::string& split, const BpeModel& bpe,
                                      std::uint64_t seed) {
  const std::string path = require_file(dir, artifact::preprocessed, "preprocess");
  std::vector<EvalItem> items;
  for (Sample& s : read_split(path, split, seed)) {
    EvalItem it;
    it.id = s.pose.id;
    it.text = s.text;
    it.text_ids = text_ids(bpe, s.text);
    it.reference = std::move(s.pose);
    items.push_back(std::move(it));
  }
  return items;
}

json run_synth(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  fs::create_directories(dir);
  const auto rules = make_rules(config.synth.words, config.synth.rule_window, stream_seed(config, s_rules));
  SynthOptions o;
  o.n_sentences = config.synth.sentences;
  o.max_words = config.synth.max_words;
  o.jitter = config.synth.jitter;
  o.seed = stream_seed(config, s_corpus);
  const Corpus corpus = synth_corpus(rules, o);
  const std::string out = path_in(dir, artifact::corpus);
  write_corpus(out, corpus);
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus) ++counts[split_for(s.pose.id, config.seed)];
  write_manifest(dir, "synth", config, {}, {out}, timer);
  json words = json::array();
  for (const auto& r : rules) words.push_back(r.word);
  return {{"sequences", corpus.size()}, {"words", words}, {"splits", counts}};
}

json run_preprocess(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string in = require_file(dir, artifact::corpus, "synth");
  const SkeletonSpec skel = config.skeleton_spec();
  Corpus out;
  std::size_t frames_in = 0, frames_out = 0;
  for (const Sample& s : read_corpus(in)) {
    const PreprocessResult r = preprocess(s.pose, skel, config.preprocess);
    frames_in += s.pose.num_frames();
    frames_out += r.pose.num_frames();
    out.push_back({s.text, r.pose});
  }
  const std::string path = path_in(dir, artifact::preprocessed);
  write_corpus(path, out);
  write_manifest(dir, "preprocess", config, {in}, {path}, timer);
  return {{"sequences", out.size()}, {"frames_in", frames_in}, {"frames_removed", frames_in - frames_out}};
}

json run_train_dvae(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string in = require_file(dir, artifact::preprocessed, "preprocess");
  std::vector<Tensor> segs;
  for (const Sample& s : read_split(in, "train", config.seed)) {
    auto d = segment_data(s.pose, config.dvae.window);
    segs.insert(segs.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
  }
  if (segs.empty()) throw std::invalid_argument("no training segments of window " + std::to_string(config.dvae.window));
  StgpDvae model(config.dvae, config.skeleton_spec(), stream_seed(config, s_dvae_init));
  Rng rng = Rng(config.seed).split(s_dvae_train);
  const std::string ckpt = path_in(dir, artifact::dvae);
  DvaeTrainConfig tc = config.dvae_train;
  tc.on_checkpoint = [&](std::size_t) { save_dvae(ckpt, model, config, rng); };
  const DvaeTrainLog log = train_dvae(model, segs, tc, rng);
  save_dvae(ckpt, model, config, rng);

  std::string csv = "step,tau,loss,recon,diversity\n";
  for (const auto& e : log.entries) {
    csv += std::to_string(e.step) + "," + format_double(e.tau) + "," + format_double(e.loss) + "," +
           format_double(e.recon) + "," + format_double(e.diversity) + "\n";
  }
  const std::string log_path = path_in(dir, artifact::dvae_log);
  write_file(log_path, csv);
  const std::vector<int> tokens = model.tokenize(segs);
  write_manifest(dir, "train-dvae", config, {in}, {ckpt, log_path}, timer);
  return {{"segments", segs.size()},
          {"final_loss", log.final_loss},
          {"final_recon", log.recon_per_step.empty() ? 0.0 : log.recon_per_step.back()},
          {"perplexity", codebook_perplexity(tokens, config.dvae.codebook_size)}};
}

json run_tokenize(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string in = require_file(dir, artifact::preprocessed, "preprocess");
  const std::string ckpt = require_file(dir, artifact::dvae, "train-dvae");
  const auto dvae = load_dvae(ckpt);
  const Corpus corpus = read_corpus(in);
  std::vector<std::string> train_texts;
  for (const auto& s : corpus)
    if (split_for(s.pose.id, config.seed) == "train") train_texts.push_back(normalize_text(s.text));
  const BpeModel bpe = BpeModel::train(train_texts, config.vocab_size);
  const std::string bpe_path = path_in(dir, artifact::bpe);
  bpe.save(bpe_path);

  std::string lines;
  std::vector<int> all;
  for (const auto& s : corpus) {
    const auto segs = segment_data(s.pose, dvae->config().window);
    const std::vector<int> tokens = segs.empty() ? std::vector<int>{} : dvae->tokenize(segs);
    all.insert(all.end(), tokens.begin(), tokens.end());
    const json j = {{"id", s.pose.id},
                    {"split", split_for(s.pose.id, config.seed)},
                    {"text", s.text},
                    {"text_ids", text_ids(bpe, s.text)},
                    {"tokens", tokens}};
    lines += j.dump() + "\n";
  }
  const std::string tok_path = path_in(dir, artifact::tokens);
  write_file(tok_path, lines);
  write_manifest(dir, "tokenize", config, {in, ckpt}, {bpe_path, tok_path}, timer);
  const std::size_t K = dvae->config().codebook_size;
  std::vector<bool> used(K, false);
  for (int t : all) used[static_cast<std::size_t>(t)] = true;
  return {{"vocab", bpe.size()},
          {"tokens", all.size()},
          {"codes_used", std::count(used.begin(), used.end(), true)},
          {"perplexity", all.empty() ? 0.0 : codebook_perplexity(all, K)}};
}

json run_train_gen(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string in = require_file(dir, artifact::preprocessed, "preprocess");
  const std::string ckpt = require_file(dir, artifact::dvae, "train-dvae");
  const std::string bpe_path = require_file(dir, artifact::bpe, "tokenize");
  const std::string tok_path = require_file(dir, artifact::tokens, "tokenize");
  const auto dvae = load_dvae(ckpt);
  const BpeModel bpe = BpeModel::load(bpe_path);

  std::map<std::string, std::vector<int>> recorded;
  {
    std::istringstream lines(read_file(tok_path));
    for (std::string line; std::getline(lines, line);)
      if (!line.empty()) {
        const json j = json::parse(line);
        recorded[j.at("id").get<std::string>()] = j.at("tokens").get<std::vector<int>>();
      }
  }
  std::vector<GenExample> examples;
  for (const Sample& s : read_split(in, "train", config.seed)) {
    GenExample ex = make_example(*dvae, s.pose.id, text_ids(bpe, s.text), s.pose);
    const auto it = recorded.find(ex.id);
    if (it == recorded.end() || it->second != ex.tokens) {
      throw PrerequisiteError(tok_path + " (stale for " + ex.id + ")", "tokenize");
    }
    examples.push_back(std::move(ex));
  }
  const std::vector<EvalItem> dev = load_eval_items(dir, "dev", bpe, config.seed);
  const Embedder embed = dvae_embedder(*dvae);
  std::vector<std::vector<double>> dev_real;
  for (const auto& it : dev)
    if (it.reference.num_frames() >= dvae->config().window) dev_real.push_back(embed(it.reference));

  GeneratorConfig gc = generator_config(config, bpe.size());
  gc.codebook_size = dvae->config().codebook_size;
  Generator gen(gc, stream_seed(config, s_gen_init));
  Rng rng = Rng(config.seed).split(s_gen_train);
  const std::size_t max_len = config.decode.max_len;
  auto validate = [&](const Generator& g) { return generation_fgd(g, *dvae, dev, dev_real, max_len); };
  const GenTrainLog log = train_generator(gen, examples, config.gen_train, rng,
                                          dev.empty() ? std::function<double(const Generator&)>{} : validate);
  const std::string out = path_in(dir, artifact::generator);
  save_generator(out, gen, config, rng);

  std::string csv = "step,loss,ce,latent\n";
  for (const auto& e : log.entries) {
    csv += std::to_string(e.step) + "," + format_double(e.loss) + "," + format_double(e.ce) + "," +
           format_double(e.latent) + "\n";
  }
  const std::string log_path = path_in(dir, artifact::gen_log);
  write_file(log_path, csv);
  write_manifest(dir, "train-gen", config, {in, ckpt, bpe_path, tok_path}, {out, log_path}, timer);
  json val = json::array();
  for (auto [step, score] : log.validation) val.push_back({{"step", step}, {"dev_fgd", finite_or_nan(score)}});
  return {{"examples", examples.size()},
          {"final_loss", log.final_loss},
          {"final_ce", log.ce_per_step.empty() ? 0.0 : log.ce_per_step.back()},
          {"validation", val},
          {"selected_step", log.selected_step}};
}

json run_train_bt(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string in = require_file(dir, artifact::preprocessed, "preprocess");
  std::vector<TextPose> train, dev;
  std::vector<std::string> texts;
  for (Sample& s : read_corpus(in)) {
    const std::string split = split_for(s.pose.id, config.seed);
    if (split == "train") {
      texts.push_back(normalize_text(s.text));
      train.push_back({s.text, std::move(s.pose)});
    } else if (split == "dev") {
      dev.push_back({s.text, std::move(s.pose)});
    }
  }
  if (train.empty() || dev.empty()) throw std::invalid_argument("back-translator needs train and dev sequences");
  const std::size_t V = train.front().pose.joints, C = train.front().pose.channels;
  BackTranslator bt(config.bt, BpeModel::train(texts, config.bt_vocab_size), V, C, stream_seed(config, s_bt_init));
  Rng rng = Rng(config.seed).split(s_bt_train);
  const BtTrainLog log = bt.train(train, dev, rng);
  const std::string out = path_in(dir, artifact::back_translator);
  save_back_translator(out, bt, rng);
  write_manifest(dir, "train-bt", config, {in}, {out}, timer);
  json val = json::array();
  for (auto [step, b] : log.validation) val.push_back({{"step", step}, {"bleu4", b}});
  return {{"pairs", train.size()},
          {"validation", val},
          {"selected_step", log.selected_step},
          {"validation_bleu4", bt.validation_bleu()}};
}

json run_generate(const PipelineConfig& config, const std::string& dir, const GenerateOptions& options) {
  StageTimer timer;
  const std::string gen_path = require_file(dir, artifact::generator, "train-gen");
  const std::string dvae_path = require_file(dir, artifact::dvae, "train-dvae");
  const std::string bpe_path = require_file(dir, artifact::bpe, "tokenize");
  const auto gen = load_generator(gen_path);
  const auto dvae = load_dvae(dvae_path);
  const BpeModel bpe = BpeModel::load(bpe_path);
  if (gen->config().codebook_size != dvae->config().codebook_size) {
    throw PrerequisiteError(gen_path + " (trained against a different dVAE)", "train-gen");
  }
  DecodeOptions d = config.decode;
  if (options.beam) d.beam = *options.beam;
  if (options.max_len) d.max_len = *options.max_len;
  if (options.length_penalty) d.length_penalty = *options.length_penalty;
  if (d.beam == 0) throw std::invalid_argument("config field 'decode.beam' must be >= 1");

  Corpus out;
  std::string token_lines;
  std::size_t total = 0;
  for (const EvalItem& it : load_eval_items(dir, options.split, bpe, config.seed)) {
    const std::vector<int> body = generate_tokens(*gen, it.text_ids, d);
    total += body.size();
    out.push_back({it.text, synthesize(*dvae, body, it.id)});
    token_lines += json{{"id", it.id}, {"text", it.text}, {"tokens", body}}.dump() + "\n";
  }
  const std::string pose_path = path_in(dir, artifact::generated);
  const std::string tok_path = path_in(dir, artifact::generated_tokens);
  write_corpus(pose_path, out);
  write_file(tok_path, token_lines);
  write_manifest(dir, "generate", config, {gen_path, dvae_path, bpe_path}, {pose_path, tok_path}, timer);
  return {{"sequences", out.size()}, {"tokens", total}, {"beam", d.beam}, {"split", options.split}};
}

json run_eval(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string gen_path = require_file(dir, artifact::generated, "generate");
  const std::string dvae_path = require_file(dir, artifact::dvae, "train-dvae");
  const std::string bt_path = require_file(dir, artifact::back_translator, "train-bt");
  const std::string bpe_path = require_file(dir, artifact::bpe, "tokenize");
  const auto dvae = load_dvae(dvae_path);
  const auto bt = load_back_translator(bt_path);
  const BpeModel bpe = BpeModel::load(bpe_path);
  std::map<std::string, EvalItem> refs;
  for (EvalItem& it : load_eval_items(dir, "all", bpe, config.seed)) refs.emplace(it.id, std::move(it));
  std::vector<PoseSequence> generated;
  std::vector<EvalItem> items;
  for (Sample& s : read_corpus(gen_path)) {
    const auto it = refs.find(s.pose.id);
    if (it == refs.end()) throw std::invalid_argument("generated sequence '" + s.pose.id + "' has no reference");
    items.push_back(it->second);
    generated.push_back(std::move(s.pose));
  }
  const EvalReport r = evaluate(generated, items, *dvae, *bt);
  const std::string out = path_in(dir, artifact::eval);
  write_file(out, r.to_json().dump(2) + "\n");
  write_manifest(dir, "eval", config, {gen_path, dvae_path, bt_path, bpe_path}, {out}, timer);
  return r.to_json();
}

json run_beam_sweep(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string gen_path = require_file(dir, artifact::generator, "train-gen");
  const std::string dvae_path = require_file(dir, artifact::dvae, "train-dvae");
  const std::string bt_path = require_file(dir, artifact::back_translator, "train-bt");
  const std::string bpe_path = require_file(dir, artifact::bpe, "tokenize");
  const auto gen = load_generator(gen_path);
  const auto dvae = load_dvae(dvae_path);
  const auto bt = load_back_translator(bt_path);
  const BpeModel bpe = BpeModel::load(bpe_path);
  const std::vector<EvalItem> items = load_eval_items(dir, "test", bpe, config.seed);
  const std::vector<SweepRow> rows = beam_sweep(*gen, *dvae, *bt, items, config.sweep_beams, config.decode.max_len);
  const std::string out = path_in(dir, artifact::sweep);
  write_file(out, sweep_csv(rows));
  write_manifest(dir, "beam-sweep", config, {gen_path, dvae_path, bt_path, bpe_path}, {out}, timer);
  json j = json::array();
  for (const auto& r : rows) {
    json row = r.report.to_json();
    row["beam"] = r.beam;
    j.push_back(row);
  }
  return {{"rows", j}};
}

json run_ablate(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::string in = require_file(dir, artifact::preprocessed, "preprocess");
  const std::string bt_path = require_file(dir, artifact::back_translator, "train-bt");
  const std::string bpe_path = require_file(dir, artifact::bpe, "tokenize");
  const auto bt = load_back_translator(bt_path);
  const BpeModel bpe = BpeModel::load(bpe_path);
  const Corpus train = read_split(in, "train", config.seed);
  const std::vector<EvalItem> test = load_eval_items(dir, "test", bpe, config.seed);
  const SkeletonSpec skel = config.skeleton_spec();

  std::string csv = "window,codebook,fgd,dtw,dtw_mje,bleu4,perplexity\n";
  json rows = json::array();
  std::uint64_t run = 0;
  for (std::size_t W : config.ablate.windows) {
    for (std::size_t K : config.ablate.codebooks) {
      ++run;
      json row = {{"window", W}, {"codebook", K}};
      double fgd = NAN, dtw_v = NAN, dtw_mje_v = NAN, bleu = NAN, ppl = NAN;
      try {
        PipelineConfig c = config;
        c.dvae.window = W;
        c.dvae.codebook_size = K;
        c.dvae.validate(skel);
        std::vector<Tensor> segs;
        for (const Sample& s : train) {
          auto d = segment_data(s.pose, W);
          segs.insert(segs.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
        }
        if (segs.empty()) throw std::invalid_argument("no training sequence spans one window");
        StgpDvae dvae(c.dvae, skel, stream_seed(config, s_ablate + 2 * run));
        Rng rng = Rng(config.seed).split(s_ablate + 2 * run + 1);
        DvaeTrainConfig dt = c.dvae_train;
        dt.steps = config.ablate.dvae_steps;
        train_dvae(dvae, segs, dt, rng);
        ppl = codebook_perplexity(dvae.tokenize(segs), K);

        std::vector<GenExample> examples;
        for (const Sample& s : train) examples.push_back(make_example(dvae, s.pose.id, text_ids(bpe, s.text), s.pose));
        Generator gen(generator_config(c, bpe.size()), rng.next_u64());
        GenTrainConfig gt = c.gen_train;
        gt.steps = config.ablate.gen_steps;
        train_generator(gen, examples, gt, rng);
        std::vector<PoseSequence> generated;
        for (const auto& it : test)
          generated.push_back(synthesize(dvae, generate_tokens(gen, it.text_ids, {1, c.decode.max_len, 0.0}), it.id));
        const EvalReport r = evaluate(generated, test, dvae, *bt);
        fgd = r.fgd, dtw_v = r.dtw, dtw_mje_v = r.dtw_mje, bleu = r.bleu4;
        row["warnings"] = r.warnings;
      } catch (const std::exception& e) {
        row["error"] = e.what();
      }
      row["fgd"] = finite_or_nan(fgd);
      row["dtw"] = finite_or_nan(dtw_v);
      row["dtw_mje"] = finite_or_nan(dtw_mje_v);
      row["bleu4"] = finite_or_nan(bleu);
      row["perplexity"] = finite_or_nan(ppl);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", W, K, fgd, dtw_v, dtw_mje_v, bleu, ppl);
      csv += buf;
      rows.push_back(row);
    }
  }
  const std::string out = path_in(dir, artifact::ablate);
  write_file(out, csv);
  write_manifest(dir, "ablate", config, {in, bt_path, bpe_path}, {out}, timer);
  return {{"rows", rows}};
}

json run_gradcheck(const PipelineConfig& config, const std::string& dir) {
  StageTimer timer;
  const std::uint64_t seed = stream_seed(config, s_gradcheck);
  const GradSuiteResult d = dvae_gradcheck(config.dvae, config.skeleton_spec(), seed);
  const GradSuiteResult g = generator_gradcheck(generator_config(config, config.vocab_size), seed);
  json modules = json::array();
  bool passed = true;
  for (const auto* r : {&d, &g}) {
    passed = passed && r->max_rel_error() <= 1e-4;
    modules.push_back({{"module", r->module},
                       {"max_rel_error", r->max_rel_error()},
                       {"checked", r->loss.checked + r->output.checked},
                       {"skipped_at_kinks", r->loss.skipped_at_kinks + r->output.skipped_at_kinks},
                       {"worst", r->loss.max_rel_error >= r->output.max_rel_error ? r->loss.worst : r->output.worst}});
  }
  fs::create_directories(dir);
  write_manifest(dir, "gradcheck", config, {}, {}, timer);
  return {{"passed", passed}, {"modules", modules}};
}

}  // namespace svq
