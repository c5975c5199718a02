#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "mvm/eval.hpp"

namespace mvm {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Runs `body`, mapping ConfigError to 2, data/parse/checkpoint errors to 3
/// and NumericError to 4. The message goes to `err`.
int run_guarded(const std::function<void()>& body, std::ostream& err);

struct GenDataOptions {
  uint64_t seed = 0;
  int sequences = 64;
  int frames = 8;
  int size = 32;
  int patch = 8;
  std::filesystem::path out;
  bool force = false;
};
void cmd_gen_data(const GenDataOptions& options);

struct PretrainOptions {
  std::optional<std::filesystem::path> config;  // optional when resuming
  std::map<std::string, std::string> overrides;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  int64_t max_steps = -1;  // absolute step to stop at; -1 runs the schedule
  bool force = false;
  int log_every = 0;  // progress lines to `log`; 0 disables
};
/// Writes loss.csv, ckpt_<step>.vmc every `checkpoint_every` steps,
/// final.vmc and manifest.json into `out`.
void cmd_pretrain(const PretrainOptions& options, std::ostream& log);

struct ReconstructOptions {
  std::filesystem::path ckpt;
  std::filesystem::path frame1, frame2;
  double ratio = 0.75;
  uint64_t seed = 0;
  std::filesystem::path out;
  bool force = false;
};
/// Writes masked_1.ppm, recon_1.ppm, masked_2.ppm, recon_2.ppm and
/// manifest.json. Both frames share one mask and use the online weights.
void cmd_reconstruct(const ReconstructOptions& options);

struct EvalOptions {
  std::optional<std::filesystem::path> ckpt;
  bool random_init = false;
  std::optional<std::filesystem::path> config;  // required with random_init
  std::map<std::string, std::string> overrides;
  std::filesystem::path data;
  std::filesystem::path out;
  PropagationConfig propagation;
  std::string branch = "online";  // or "target"
  bool force = false;
};
EvalSummary cmd_eval(const EvalOptions& options);

}  // namespace mvm
