#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "svq/pipeline/checkpoint.hpp"
#include "svq/pipeline/config.hpp"
#include "svq/pipeline/stages.hpp"

using namespace svq;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("svq_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::uint64_t le_u64(const std::string& b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

}  // namespace

TEST_CASE("checkpoint: byte layout and round trip") {
  Checkpoint c;
  c.config = {{"kind", "test"}, {"x", 1.5}};
  c.rng = Rng(42).split(3).state();
  c.tensors["b"] = Tensor({2, 3}, {1, 2, 3, 4, 5, -0.0});
  c.tensors["a"] = Tensor({1}, {0.1});
  c.tensors["c"] = Tensor({2, 1, 2}, {1e-300, 1e300, -7.25, 3.0});
  const std::string bytes = serialize_checkpoint(c);
  CHECK(bytes.substr(0, 4) == "SVQN");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  const std::string cfg = c.config.dump();
  CHECK(le_u64(bytes, 8) == cfg.size());
  CHECK(bytes.substr(16, cfg.size()) == cfg);
  std::size_t at = 16 + cfg.size();
  CHECK(le_u64(bytes, at) == c.rng.key);
  CHECK(le_u64(bytes, at + 8) == c.rng.counter);
  CHECK(le_u64(bytes, at + 16) == 3);
  // first tensor in name order is "a": u32 len, "a", dtype, rank, dims, payload
  at += 24;
  CHECK(bytes[at] == 1);
  CHECK(bytes[at + 4] == 'a');
  CHECK(bytes[at + 5] == 0);
  CHECK(bytes[at + 6] == 1);
  CHECK(le_u64(bytes, at + 10) == 1);
  CHECK(std::bit_cast<double>(le_u64(bytes, at + 18)) == 0.1);

  // header plus per-tensor records plus 8 bytes per element
  std::size_t expect = 16 + cfg.size() + 24;
  for (const auto& [name, t] : c.tensors) expect += 4 + name.size() + 1 + 4 + 8 * t.shape().size() + 8 * t.size();
  CHECK(bytes.size() == expect);

  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.config == c.config);
  CHECK(back.rng == c.rng);
  REQUIRE(back.tensors.size() == 3);
  for (const auto& [name, t] : c.tensors) {
    const Tensor& u = back.tensors.at(name);
    CHECK(u.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::bit_cast<std::uint64_t>(u[i]) == std::bit_cast<std::uint64_t>(t[i]));
  }
  CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint: corrupt input is rejected") {
  Checkpoint c;
  c.tensors["w"] = Tensor({4}, {1, 2, 3, 4});
  const std::string bytes = serialize_checkpoint(c);
  CHECK_THROWS_AS(deserialize_checkpoint("XXXX" + bytes.substr(4)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "z"), CheckpointError);
  std::string v2 = bytes;
  v2[4] = 2;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(v2), doctest::Contains("version"), CheckpointError);
}

TEST_CASE("config: profiles, JSON round trip and field-named errors") {
  const PipelineConfig desk = desk_profile();
  CHECK_NOTHROW(desk.validate());
  CHECK(config_from_json(config_to_json(desk)).dvae.window == desk.dvae.window);
  CHECK(config_to_json(config_from_json(config_to_json(desk))) == config_to_json(desk));

  const PipelineConfig full = full_profile();
  CHECK_NOTHROW(full.validate());
  CHECK(full.gen.d_model == 768);
  CHECK(full.gen.layers == 4);
  CHECK(full.gen.heads == 8);
  CHECK(full.gen.d_ff == 1024);
  CHECK(full.gen_train.batch == 64);
  CHECK(full.dvae_train.alpha == 0.1);
  CHECK(full.gen_train.beta == 0.001);
  CHECK(full.dvae_train.optimizer.lr == 1e-4);
  CHECK(full.dvae_train.anneal.start == 0.9);
  CHECK(full.dvae_train.anneal.end == 0.1);
  CHECK(config_from_json({{"profile", "full"}}).gen.d_model == 768);
  CHECK(config_from_json({{"profile", "full"}}, "desk").gen.d_model == desk.gen.d_model);

  const auto over = config_from_json({{"seed", 9}, {"dvae", {{"codebook_size", 32}, {"anneal", "linear"}}}});
  CHECK(over.seed == 9);
  CHECK(over.dvae.codebook_size == 32);
  CHECK(over.gen.codebook_size == 32);
  CHECK(over.dvae_train.anneal.shape == AnnealSchedule::linear);

  CHECK_THROWS_WITH_AS(config_from_json({{"dvae", {{"alpha", -1.0}}}}), doctest::Contains("dvae.alpha"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json({{"generator", {{"beta", -0.1}}}}), doctest::Contains("generator.beta"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json({{"dvae", {{"window", 20}}}}), doctest::Contains("window"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json({{"dvae", {{"steps", "many"}}}}), doctest::Contains("dvae.steps"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json({{"dvea", 1}}), doctest::Contains("dvea"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json({{"skeleton", "/nonexistent/skel.json"}}), doctest::Contains("skeleton"),
                       std::invalid_argument);
  CHECK_THROWS_AS(profile_by_name("huge"), std::invalid_argument);
}

TEST_CASE("hashes: FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("stages: missing inputs name the stage to run") {
  const std::string dir = temp_dir("prereq");
  const PipelineConfig c = desk_profile();
  CHECK_THROWS_WITH_AS(run_preprocess(c, dir), doctest::Contains("run synth first"), PrerequisiteError);
  CHECK_THROWS_WITH_AS(run_train_dvae(c, dir), doctest::Contains("run preprocess first"), PrerequisiteError);
  CHECK_THROWS_WITH_AS(run_generate(c, dir), doctest::Contains("run train-gen first"), PrerequisiteError);
  CHECK_THROWS_WITH_AS(run_eval(c, dir), doctest::Contains("run generate first"), PrerequisiteError);
  fs::remove_all(dir);
}

TEST_CASE("stages: model checkpoints reload to identical outputs") {
  const std::string dir = temp_dir("reload");
  PipelineConfig c = desk_profile();
  c.synth.sentences = 20;
  c.dvae_train.steps = 5;
  run_synth(c, dir);
  run_preprocess(c, dir);
  run_train_dvae(c, dir);
  const auto a = load_dvae(dir + "/" + artifact::dvae);
  const auto b = load_dvae(dir + "/" + artifact::dvae);
  for (const Var& p : a->store().trainable()) CHECK_FALSE(p.requires_grad());
  Rng rng(1);
  Tensor seg({16, 13, 2});
  for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = rng.uniform();
  const std::vector<Tensor> segs{seg};
  const Tensor la = a->logits(segs), lb = b->logits(segs);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);

  // manifests record content hashes of what they read and wrote
  std::ifstream in(dir + "/manifests/train-dvae.json");
  const auto m = nlohmann::json::parse(in);
  CHECK(m["outputs"]["dvae.ckpt"] == file_hash(dir + "/" + artifact::dvae));
  CHECK(m["inputs"]["preprocessed.jsonl"] == file_hash(dir + "/" + artifact::preprocessed));
  fs::remove_all(dir);
}
