#include "svq/pipeline/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace svq {

namespace {

using nlohmann::json;

// Reads fields out of a JSON object, remembering which keys were used so
// leftovers can be reported.
class Reader {
 public:
  explicit Reader(const json& j, std::string path = "") : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config section '" + path_ + "' must be an object");
  }
  template <class T>
  void field(const char* key, T& v) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      v = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config field '" + path_ + key + "' has the wrong type");
    }
  }
  template <class F>
  void section(const char* key, F&& body) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    Reader sub(j_.at(key), path_ + key + ".");
    body(sub);
    sub.finish();
  }
  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!used_.count(k)) throw std::invalid_argument("config field '" + path_ + k + "' is not recognized");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) {}
  template <class T>
  void field(const char* key, T& v) {
    j_[key] = v;
  }
  template <class F>
  void section(const char* key, F&& body) {
    json sub = json::object();
    Writer w(sub);
    body(w);
    j_[key] = std::move(sub);
  }

 private:
  json& j_;
};

// The one place the schema is spelled out; used for both directions.
template <class IO>
void visit(IO& io, PipelineConfig& c) {
  io.field("profile", c.profile);
  io.field("seed", c.seed);
  io.field("skeleton", c.skeleton);
  io.section("synth", [&](auto& s) {
    s.field("words", c.synth.words);
    s.field("sentences", c.synth.sentences);
    s.field("max_words", c.synth.max_words);
    s.field("jitter", c.synth.jitter);
    s.field("rule_window", c.synth.rule_window);
  });
  io.section("preprocess", [&](auto& s) {
    s.field("theta", c.preprocess.theta);
    s.field("theta_factor", c.preprocess.theta_factor);
  });
  io.section("text", [&](auto& s) { s.field("vocab_size", c.vocab_size); });
  io.section("dvae", [&](auto& s) {
    DvaeTrainConfig& t = c.dvae_train;
    s.field("window", c.dvae.window);
    s.field("channels", c.dvae.channels);
    s.field("codebook_size", c.dvae.codebook_size);
    s.field("code_dim", c.dvae.code_dim);
    s.field("block_channels", c.dvae.block_channels);
    s.field("temporal_kernel", c.dvae.temporal_kernel);
    s.field("bn_momentum", c.dvae.bn_momentum);
    s.field("steps", t.steps);
    s.field("batch", t.batch);
    s.field("alpha", t.alpha);
    s.field("tau_start", t.anneal.start);
    s.field("tau_end", t.anneal.end);
    s.field("anneal_steps", t.anneal.total_steps);
    std::string shape = t.anneal.shape == AnnealSchedule::linear ? "linear" : "exponential";
    s.field("anneal", shape);
    if (shape == "linear") {
      t.anneal.shape = AnnealSchedule::linear;
    } else if (shape == "exponential") {
      t.anneal.shape = AnnealSchedule::exponential;
    } else {
      throw std::invalid_argument("config field 'dvae.anneal' must be \"linear\" or \"exponential\"");
    }
    s.field("lr", t.optimizer.lr);
    s.field("beta1", t.optimizer.beta1);
    s.field("beta2", t.optimizer.beta2);
    s.field("weight_decay", t.optimizer.weight_decay);
    s.field("cosine_decay", t.cosine_decay);
    s.field("lr_floor", t.lr_floor);
    s.field("checkpoint_every", t.checkpoint_every);
    s.field("recalibrate", t.recalibrate);
  });
  io.section("generator", [&](auto& s) {
    GenTrainConfig& t = c.gen_train;
    s.field("d_model", c.gen.d_model);
    s.field("layers", c.gen.layers);
    s.field("heads", c.gen.heads);
    s.field("d_ff", c.gen.d_ff);
    s.field("max_text_len", c.gen.max_text_len);
    s.field("max_sign_len", c.gen.max_sign_len);
    s.field("dropout", c.gen.dropout);
    s.field("steps", t.steps);
    s.field("batch", t.batch);
    s.field("beta", t.beta);
    s.field("use_ce", t.use_ce);
    s.field("lr", t.optimizer.lr);
    s.field("beta1", t.optimizer.beta1);
    s.field("beta2", t.optimizer.beta2);
    s.field("weight_decay", t.optimizer.weight_decay);
    s.field("cosine_decay", t.cosine_decay);
    s.field("lr_floor", t.lr_floor);
    s.field("eval_every", t.eval_every);
  });
  io.section("bt", [&](auto& s) {
    BackTranslatorConfig& b = c.bt;
    s.field("vocab_size", c.bt_vocab_size);
    s.field("chunk", b.chunk);
    s.field("d_model", b.d_model);
    s.field("layers", b.layers);
    s.field("heads", b.heads);
    s.field("d_ff", b.d_ff);
    s.field("dropout", b.dropout);
    s.field("max_chunks", b.max_chunks);
    s.field("max_text_len", b.max_text_len);
    s.field("steps", b.steps);
    s.field("batch", b.batch);
    s.field("lr", b.optimizer.lr);
    s.field("eval_every", b.eval_every);
  });
  io.section("decode", [&](auto& s) {
    s.field("beam", c.decode.beam);
    s.field("max_len", c.decode.max_len);
    s.field("length_penalty", c.decode.length_penalty);
  });
  io.section("sweep", [&](auto& s) { s.field("beams", c.sweep_beams); });
  io.section("ablate", [&](auto& s) {
    s.field("windows", c.ablate.windows);
    s.field("codebooks", c.ablate.codebooks);
    s.field("dvae_steps", c.ablate.dvae_steps);
    s.field("gen_steps", c.ablate.gen_steps);
  });
}

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw std::invalid_argument("config field '" + field + "' " + rule);
}

}  // namespace

void PipelineConfig::validate() const {
  require(profile == "desk" || profile == "full", "profile", "must be \"desk\" or \"full\"");
  if (!skeleton.empty()) require(std::filesystem::exists(skeleton), "skeleton", "names a missing file: " + skeleton);
  require(synth.words >= 1, "synth.words", "must be positive");
  require(synth.sentences >= 1, "synth.sentences", "must be positive");
  require(synth.max_words >= 1, "synth.max_words", "must be positive");
  require(synth.jitter >= 0.0, "synth.jitter", "must be >= 0");
  require(synth.rule_window >= 1, "synth.rule_window", "must be positive");
  require(preprocess.theta_factor > 0.0, "preprocess.theta_factor", "must be positive");
  require(vocab_size >= 8, "text.vocab_size", "must be >= 8");
  require(bt_vocab_size >= 8, "bt.vocab_size", "must be >= 8");
  dvae.validate(skeleton_spec());
  require(dvae_train.alpha >= 0.0, "dvae.alpha", "must be >= 0");
  require(dvae_train.batch >= 1, "dvae.batch", "must be positive");
  require(dvae_train.anneal.start > 0.0 && dvae_train.anneal.end > 0.0, "dvae.tau_start", "and tau_end must be positive");
  require(dvae_train.optimizer.lr > 0.0, "dvae.lr", "must be positive");
  GeneratorConfig g = gen;
  g.text_vocab = vocab_size;
  g.codebook_size = dvae.codebook_size;
  g.validate();
  require(gen_train.beta >= 0.0, "generator.beta", "must be >= 0");
  require(gen_train.use_ce || gen_train.beta > 0.0, "generator.use_ce", "and beta leave no loss term");
  require(gen_train.batch >= 1, "generator.batch", "must be positive");
  require(gen_train.optimizer.lr > 0.0, "generator.lr", "must be positive");
  bt.validate();
  require(decode.beam >= 1, "decode.beam", "must be >= 1");
  require(decode.max_len >= 2, "decode.max_len", "must be >= 2");
  require(!sweep_beams.empty(), "sweep.beams", "must not be empty");
  for (std::size_t b : sweep_beams) require(b >= 1, "sweep.beams", "entries must be >= 1");
}

SkeletonSpec PipelineConfig::skeleton_spec() const { return skeleton.empty() ? upper_body13() : load_skeleton(skeleton); }

PipelineConfig desk_profile() {
  PipelineConfig c;
  c.gen.codebook_size = c.dvae.codebook_size;
  return c;
}

PipelineConfig full_profile() {
  PipelineConfig c;
  c.profile = "full";
  c.dvae.window = 32;
  c.dvae.codebook_size = 1024;
  c.dvae.code_dim = 256;
  c.dvae.block_channels = {64, 64, 128, 256};
  c.dvae_train.alpha = 0.1;
  c.dvae_train.batch = 64;
  c.dvae_train.anneal = {0.9, 0.1, 0, AnnealSchedule::linear};
  c.dvae_train.optimizer.lr = 1e-4;
  c.dvae_train.steps = 100000;
  c.gen.codebook_size = c.dvae.codebook_size;
  c.gen.d_model = 768;
  c.gen.layers = 4;
  c.gen.heads = 8;
  c.gen.d_ff = 1024;
  c.gen.max_text_len = 128;
  c.gen.max_sign_len = 128;
  c.gen_train.batch = 64;
  c.gen_train.beta = 0.001;
  c.gen_train.optimizer.lr = 1e-4;
  c.gen_train.steps = 100000;
  c.vocab_size = 3000;
  c.bt_vocab_size = 3000;
  c.decode.max_len = 128;
  return c;
}

PipelineConfig profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "full") return full_profile();
  throw std::invalid_argument("config field 'profile' must be \"desk\" or \"full\", got \"" + name + "\"");
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  json j = json::object();
  PipelineConfig copy = c;
  Writer w(j);
  visit(w, copy);
  return j;
}

PipelineConfig config_from_json(const nlohmann::json& j, const std::string& profile, bool validate) {
  std::string name = profile.empty() ? "desk" : profile;
  if (j.contains("profile") && profile.empty()) {
    if (!j["profile"].is_string()) throw std::invalid_argument("config field 'profile' has the wrong type");
    name = j["profile"].get<std::string>();
  }
  PipelineConfig c = profile_by_name(name);
  Reader r(j);
  visit(r, c);
  r.finish();
  c.profile = name;
  c.gen.codebook_size = c.dvae.codebook_size;
  if (validate) c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path, const std::string& profile) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config file not found: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, profile);
}

}  // namespace svq
