#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "svq/dvae/stgp.hpp"
#include "svq/gen/beam.hpp"
#include "svq/gen/generator.hpp"
#include "svq/metrics/back_translator.hpp"
#include "svq/pose/pose.hpp"

namespace svq {

struct SynthConfig {
  std::size_t words = 10;
  std::size_t sentences = 700;
  std::size_t max_words = 6;
  double jitter = 0.01;
  std::size_t rule_window = 16;  // word durations are this or twice this
};

struct AblateConfig {
  std::vector<std::size_t> windows{16, 32, 64};
  std::vector<std::size_t> codebooks{512, 1024, 2048, 4096, 8192};
  std::size_t dvae_steps = 300;
  std::size_t gen_steps = 300;
};

// Everything a pipeline run depends on. Generator codebook_size and
// text_vocab are filled in from the dVAE config and the BPE model.
struct PipelineConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::string skeleton;  // path; empty selects the built-in 13-joint skeleton
  SynthConfig synth;
  PreprocessOptions preprocess;
  std::size_t vocab_size = 120;
  DvaeConfig dvae;
  DvaeTrainConfig dvae_train;
  GeneratorConfig gen;
  GenTrainConfig gen_train;
  BackTranslatorConfig bt;
  std::size_t bt_vocab_size = 120;
  DecodeOptions decode{1, 64, 0.0};
  std::vector<std::size_t> sweep_beams{1, 2, 3, 4, 5};
  AblateConfig ablate;

  // Field-named std::invalid_argument on the first violation; also checks
  // that a skeleton path, when set, exists.
  void validate() const;
  SkeletonSpec skeleton_spec() const;
};

PipelineConfig desk_profile();
// Model sizes and optimizer settings of the full-scale setup. Kept for
// reference; far beyond what a desk run can train.
PipelineConfig full_profile();
PipelineConfig profile_by_name(const std::string& name);

nlohmann::json config_to_json(const PipelineConfig& c);
// Starts from the profile named in j (or `profile` when given and j has
// none) and overrides the fields present. Unknown keys are rejected.
// Checkpoint readers pass validate = false: a stored config may name a
// skeleton file that has since moved.
PipelineConfig config_from_json(const nlohmann::json& j, const std::string& profile = "", bool validate = true);
PipelineConfig load_config(const std::string& path, const std::string& profile = "");

}  // namespace svq
