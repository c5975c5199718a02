#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvm/model.hpp"
#include "mvm/tensor.hpp"

namespace mvm {

struct TrainConfig {
  double lr = 2e-3;
  int batch_size = 16;
  int epochs = 100;
  int warmup_epochs = 5;
  double min_lr = 2e-9;
  double weight_decay = 0.05;
  std::array<double, 2> betas{0.9, 0.95};
  double mask_ratio = 0.75;
  double gamma = 1.0;
  int frame_gap = 1;
  double momentum = 0.996;
  uint64_t seed = 0;

  int pairs_per_epoch = 64;
  int image_size = 32;
  bool symmetric_masking = true;
  bool shared_augmentation = true;
  bool color_jitter = false;
  bool norm_pix_loss = true;
  bool use_consistency = true;
  Precision precision = Precision::f64;
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  // Gradient path from the target loss into the online branch. Only "off"
  // is implemented.
  std::string target_grad_to_online = "off";

  int64_t steps_per_epoch() const;
  int64_t total_steps() const;
  void validate() const;
};

struct RunConfig {
  TrainConfig train;
  ModelConfig model;

  void validate() const;
};

/// Every recognized key, in canonical order.
const std::vector<std::string>& config_keys();

/// Parses flat `key = value` text ('#' starts a comment). Every key in
/// `config_keys()` must be present exactly once; unknown keys are rejected.
/// `overrides` replace file values before validation. Errors name the key.
RunConfig parse_run_config(const std::string& text,
                           const std::map<std::string, std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::map<std::string, std::string>& overrides = {});

/// Canonical text form; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& config);

/// Git-style blob hash (SHA-1 over "blob <len>\0" + text), lowercase hex.
std::string content_hash(const std::string& text);

}  // namespace mvm
