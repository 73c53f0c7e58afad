// Command-line driver for the pipeline stages.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "svq/numerics/runtime.hpp"
#include "svq/pipeline/checkpoint.hpp"
#include "svq/pipeline/stages.hpp"
#include "svq/pose/io.hpp"

using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::string profile;
};

struct Overrides {
  std::optional<std::size_t> dvae_steps, gen_steps, bt_steps;
  std::vector<std::size_t> beams, windows, codebooks;
  std::optional<std::size_t> ablate_dvae_steps, ablate_gen_steps;
};

svq::PipelineConfig resolve(const Globals& g, const Overrides& o) {
  svq::PipelineConfig c = g.config_path.empty() ? svq::profile_by_name(g.profile.empty() ? "desk" : g.profile)
                                                : svq::load_config(g.config_path, g.profile);
  if (g.seed) c.seed = *g.seed;
  if (o.dvae_steps) c.dvae_train.steps = *o.dvae_steps;
  if (o.gen_steps) c.gen_train.steps = *o.gen_steps;
  if (o.bt_steps) c.bt.steps = *o.bt_steps;
  if (!o.beams.empty()) c.sweep_beams = o.beams;
  if (!o.windows.empty()) c.ablate.windows = o.windows;
  if (!o.codebooks.empty()) c.ablate.codebooks = o.codebooks;
  if (o.ablate_dvae_steps) c.ablate.dvae_steps = *o.ablate_dvae_steps;
  if (o.ablate_gen_steps) c.ablate.gen_steps = *o.ablate_gen_steps;
  c.validate();
  return c;
}

int fail(const std::string& command, const char* kind, const std::string& msg, int code) {
  std::cerr << json{{"error", msg}, {"kind", kind}, {"command", command}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  svq::tune_allocator();
  CLI::App app{"Discrete-token sign pose pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Overrides o;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--out", g.out, "Run directory")->capture_default_str();
  app.add_option("--profile", g.profile, "Base profile")->check(CLI::IsMember({"desk", "full"}));

  svq::GenerateOptions gen_opts;
  std::string command;
  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->callback([&command, name] { command = name; });
    return sub;
  };
  add("synth", "Write a seeded synthetic text/pose corpus");
  add("preprocess", "Center, denoise and normalize the corpus");
  add("train-dvae", "Train the pose dVAE")->add_option("--steps", o.dvae_steps, "Training steps");
  add("tokenize", "Fit BPE and tokenize every sequence with the dVAE");
  add("train-gen", "Train the text-to-token generator")->add_option("--steps", o.gen_steps, "Training steps");
  add("train-bt", "Train the back-translation model on real pairs")->add_option("--steps", o.bt_steps, "Training steps");
  CLI::App* gen = add("generate", "Generate poses for a split");
  gen->add_option("--beam", gen_opts.beam, "Beam size (default from config)");
  gen->add_option("--max-len", gen_opts.max_len, "Maximum framed token length");
  gen->add_option("--length-penalty", gen_opts.length_penalty, "Length penalty exponent");
  gen->add_option("--split", gen_opts.split, "train|dev|test|all")
      ->check(CLI::IsMember({"train", "dev", "test", "all"}))
      ->capture_default_str();
  add("eval", "Score generated poses (FGD, DTW, DTW-MJE, BLEU-4)");
  add("beam-sweep", "Evaluate the test split for several beam sizes")->add_option("--beams", o.beams, "Beam sizes");
  CLI::App* ab = add("ablate", "Window x codebook-size grid");
  ab->add_option("--windows", o.windows, "Window lengths");
  ab->add_option("--codebooks", o.codebooks, "Codebook sizes");
  ab->add_option("--dvae-steps", o.ablate_dvae_steps, "dVAE steps per cell");
  ab->add_option("--gen-steps", o.ablate_gen_steps, "Generator steps per cell");
  add("gradcheck", "Finite-difference check of the dVAE and generator losses");
  add("show-config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(command, "usage", e.what(), 64);
  }

  try {
    const svq::PipelineConfig c = resolve(g, o);
    json summary;
    if (command == "synth") summary = svq::run_synth(c, g.out);
    else if (command == "preprocess") summary = svq::run_preprocess(c, g.out);
    else if (command == "train-dvae") summary = svq::run_train_dvae(c, g.out);
    else if (command == "tokenize") summary = svq::run_tokenize(c, g.out);
    else if (command == "train-gen") summary = svq::run_train_gen(c, g.out);
    else if (command == "train-bt") summary = svq::run_train_bt(c, g.out);
    else if (command == "generate") summary = svq::run_generate(c, g.out, gen_opts);
    else if (command == "eval") summary = svq::run_eval(c, g.out);
    else if (command == "beam-sweep") summary = svq::run_beam_sweep(c, g.out);
    else if (command == "ablate") summary = svq::run_ablate(c, g.out);
    else if (command == "gradcheck") summary = svq::run_gradcheck(c, g.out);
    else if (command == "show-config") summary = svq::config_to_json(c);
    std::cout << summary.dump() << std::endl;
    if (command == "gradcheck" && !summary["passed"].get<bool>()) {
      return fail(command, "gradcheck", "finite-difference error above 1e-4", 1);
    }
    return 0;
  } catch (const svq::PrerequisiteError& e) {
    return fail(command, "prerequisite", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return fail(command, "invalid", e.what(), 3);
  } catch (const std::exception& e) {
    return fail(command, "runtime", e.what(), 1);
  }
}
