#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "svq/dvae/stgp.hpp"
#include "svq/gen/generator.hpp"
#include "svq/metrics/back_translator.hpp"
#include "svq/metrics/evaluation.hpp"
#include "svq/pipeline/config.hpp"
#include "svq/text/bpe.hpp"

namespace svq {

// A stage input is missing; what() says which stage produces it.
class PrerequisiteError : public std::runtime_error {
 public:
  PrerequisiteError(const std::string& file, const std::string& stage)
      : std::runtime_error("missing " + file + "; run " + stage + " first"), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// File names inside a run directory.
namespace artifact {
inline constexpr const char* corpus = "corpus.jsonl";
inline constexpr const char* preprocessed = "preprocessed.jsonl";
inline constexpr const char* dvae = "dvae.ckpt";
inline constexpr const char* dvae_log = "dvae_log.csv";
inline constexpr const char* bpe = "bpe.json";
inline constexpr const char* tokens = "tokens.jsonl";
inline constexpr const char* generator = "gen.ckpt";
inline constexpr const char* gen_log = "gen_log.csv";
inline constexpr const char* back_translator = "bt.ckpt";
inline constexpr const char* generated = "generated.jsonl";
inline constexpr const char* generated_tokens = "generated_tokens.jsonl";
inline constexpr const char* eval = "eval.json";
inline constexpr const char* sweep = "beam_sweep.csv";
inline constexpr const char* ablate = "ablate.csv";
inline constexpr const char* manifests = "manifests";
}  // namespace artifact

// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string file_hash(const std::string& path);

// Splits are assigned by a seeded hash of the sequence id.
std::string split_for(const std::string& id, std::uint64_t seed);

// Model persistence. Loaded models are frozen.
void save_dvae(const std::string& path, const StgpDvae& dvae, const PipelineConfig& config, const Rng& rng);
std::unique_ptr<StgpDvae> load_dvae(const std::string& path);
GeneratorConfig generator_config(const PipelineConfig& config, std::size_t text_vocab);
void save_generator(const std::string& path, const Generator& gen, const PipelineConfig& config, const Rng& rng);
std::unique_ptr<Generator> load_generator(const std::string& path);
void save_back_translator(const std::string& path, const BackTranslator& bt, const Rng& rng);
std::unique_ptr<BackTranslator> load_back_translator(const std::string& path);

struct GenerateOptions {
  std::string split = "test";  // train | dev | test | all
  std::optional<std::size_t> beam;
  std::optional<std::size_t> max_len;
  std::optional<double> length_penalty;
};

// Each stage reads its inputs from `dir`, writes its outputs and a manifest
// under dir/manifests/<stage>.json, and returns a summary.
nlohmann::json run_synth(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_preprocess(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_train_dvae(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_tokenize(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_train_gen(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_train_bt(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_generate(const PipelineConfig& config, const std::string& dir, const GenerateOptions& options = {});
nlohmann::json run_eval(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_beam_sweep(const PipelineConfig& config, const std::string& dir);
nlohmann::json run_ablate(const PipelineConfig& config, const std::string& dir);
// Summary has "passed" (all errors <= 1e-4) and per-module maxima.
nlohmann::json run_gradcheck(const PipelineConfig& config, const std::string& dir);

// Reference items (text, BPE ids, preprocessed pose) of one split.
std::vector<EvalItem> load_eval_items(const std::string& dir, const std::string& split, const BpeModel& bpe,
                                      std::uint64_t seed);

}  // namespace svq
