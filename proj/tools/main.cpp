#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvm/commands.hpp"
#include "mvm/config.hpp"

namespace {

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw mvm::ConfigError("--set expects key=value, got '" + item + "'");
    }
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked video modeling with sparse convolutional autoencoders"};
  app.require_subcommand(1);

  mvm::GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic moving-shapes dataset");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--sequences", gen.sequences, "Number of sequences");
  gen_cmd->add_option("--frames", gen.frames, "Frames per sequence");
  gen_cmd->add_option("--size", gen.size, "Frame side length in pixels");
  gen_cmd->add_option("--patch", gen.patch, "Patch size the frame side must be divisible by");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  mvm::PretrainOptions pre;
  std::string pre_config, pre_resume;
  std::vector<std::string> pre_sets;
  auto* pre_cmd = app.add_subcommand("pretrain", "Run masked reconstruction pretraining");
  pre_cmd->add_option("--config", pre_config, "Run config file (key = value)");
  pre_cmd->add_option("--set", pre_sets, "Override a config key: key=value (repeatable)");
  pre_cmd->add_option("--data", pre.data, "Sequence store directory")->required();
  pre_cmd->add_option("--out", pre.out, "Run directory")->required();
  pre_cmd->add_option("--resume", pre_resume, "Checkpoint to continue from");
  pre_cmd->add_option("--max-steps", pre.max_steps, "Stop once this absolute step is reached");
  pre_cmd->add_option("--log-every", pre.log_every, "Progress line every N steps (0 = quiet)");
  pre_cmd->add_flag("--force", pre.force, "Overwrite a non-empty run directory");

  mvm::ReconstructOptions rec;
  std::vector<std::string> rec_pair;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Visualize masked reconstruction of a frame pair");
  rec_cmd->add_option("--ckpt", rec.ckpt, "Checkpoint")->required();
  rec_cmd->add_option("--pair", rec_pair, "Two PPM frames")->required()->expected(2);
  rec_cmd->add_option("--ratio", rec.ratio, "Masking ratio in [0, 1)");
  rec_cmd->add_option("--seed", rec.seed, "Mask seed");
  rec_cmd->add_option("--out", rec.out, "Output directory")->required();
  rec_cmd->add_flag("--force", rec.force, "Overwrite a non-empty output directory");

  mvm::EvalOptions ev;
  std::string ev_ckpt, ev_config;
  std::vector<std::string> ev_sets;
  auto* ev_cmd = app.add_subcommand("eval", "Label-propagation benchmark on frozen features");
  auto* ck_opt = ev_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint");
  auto* ri_opt = ev_cmd->add_flag("--random-init", ev.random_init, "Use freshly initialized weights");
  ck_opt->excludes(ri_opt);
  ev_cmd->add_option("--config", ev_config, "Run config (for --random-init)");
  ev_cmd->add_option("--set", ev_sets, "Override a config key: key=value (repeatable)");
  ev_cmd->add_option("--data", ev.data, "Sequence store with label maps")->required();
  ev_cmd->add_option("--out", ev.out, "Results JSON-lines file")->required();
  ev_cmd->add_option("--k", ev.propagation.k, "Neighbors per target site");
  ev_cmd->add_option("--temperature", ev.propagation.temperature, "Softmax temperature");
  ev_cmd->add_option("--context", ev.propagation.context_frames, "Previous frames in the context");
  ev_cmd->add_option("--feature-stage", ev.propagation.feature_stage, "Encoder stage (1-based, 0 = final)");
  ev_cmd->add_option("--branch", ev.branch, "Checkpoint weights: online or target");
  ev_cmd->add_flag("--force", ev.force, "Overwrite an existing results file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mvm::kExitConfig;
  }

  return mvm::run_guarded(
      [&] {
        if (*gen_cmd) {
          mvm::cmd_gen_data(gen);
        } else if (*pre_cmd) {
          if (!pre_config.empty()) pre.config = pre_config;
          if (!pre_resume.empty()) pre.resume = pre_resume;
          pre.overrides = parse_overrides(pre_sets);
          mvm::cmd_pretrain(pre, std::cerr);
        } else if (*rec_cmd) {
          rec.frame1 = rec_pair.at(0);
          rec.frame2 = rec_pair.at(1);
          mvm::cmd_reconstruct(rec);
        } else if (*ev_cmd) {
          if (!ev_ckpt.empty()) ev.ckpt = ev_ckpt;
          if (!ev_config.empty()) ev.config = ev_config;
          ev.overrides = parse_overrides(ev_sets);
          const auto summary = mvm::cmd_eval(ev);
          std::printf("sequences %zu mean_iou %.6f\n", summary.sequences.size(), summary.mean_iou);
        }
      },
      std::cerr);
}
