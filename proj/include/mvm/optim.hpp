#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mvm/config.hpp"
#include "mvm/params.hpp"

namespace mvm {

/// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t t = 0;

  /// Zeroed moments shaped like `params`.
  static AdamWState zeros_like(const ParamSet& params);
};

/// One AdamW step over every parameter. Decoupled decay (theta -= lr*wd*theta)
/// is skipped for parameters flagged `decay == false`. Missing gradients count
/// as zero. Throws NumericError on a non-finite gradient before touching any
/// parameter.
void adamw_update(ParamSet& params, AdamWState& state, double lr, double beta1, double beta2,
                  double weight_decay, double eps = 1e-8);

/// Linear warmup from 0 to `lr`, then cosine decay to `min_lr` at the last step.
double lr_at(int64_t step, const TrainConfig& config);

}  // namespace mvm
