#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mvm/config.hpp"
#include "mvm/dataio.hpp"
#include "mvm/model.hpp"
#include "mvm/objective.hpp"
#include "mvm/optim.hpp"
#include "mvm/rng.hpp"

namespace mvm {

/// Online parameters (optimized) and their EMA-tracked target copy.
struct DualParams {
  ParamSet online;
  ParamSet target;
  double momentum = 0.996;
};

/// target <- m * target + (1 - m) * online for every parameter.
void ema_update(DualParams& dual);

/// Crop box in source pixels, flip flag and (optional) photometric jitter.
struct AugmentRecord {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  bool flip = false;
  double brightness = 0.0;  // additive
  double contrast = 1.0;    // multiplicative around 0.5
  bool operator==(const AugmentRecord&) const = default;
};

struct AugmentConfig {
  int out_size = 32;
  bool color_jitter = false;
};

/// Draws one crop (area scale in [0.5, 1], aspect in [3/4, 4/3]) and one flip.
AugmentRecord draw_augmentation(int src_h, int src_w, const AugmentConfig& config, Rng& rng);

/// Crops, bilinearly resizes to `out_size`, flips and jitters a [3,H,W] frame.
Tensor apply_augmentation(const Tensor& frame, const AugmentRecord& record, int out_size);

Tensor hflip(const Tensor& frame);

struct AugmentedPair {
  Tensor frame1, frame2;
  AugmentRecord record;
};

/// Applies a single shared augmentation to both frames.
AugmentedPair augment_pair(const Tensor& f1, const Tensor& f2, const AugmentConfig& config, Rng& rng);

struct FramePair {
  Tensor frame1, frame2;  // [3,S,S]
  int gap = 1;
  std::string sequence;
  int index = 0;  // frame1's index in its sequence
  AugmentRecord record1, record2;
  // In symmetric mode both point to the same grid.
  std::shared_ptr<const MaskGrid> mask1, mask2;
};

struct RawPair {
  size_t sequence = 0;
  int index = 0;
};

/// Uniform sequence among those longer than `gap`, uniform start index.
/// Throws DataError when no sequence is long enough.
RawPair sample_pair_indices(const std::vector<Sequence>& data, int gap, Rng& rng);

/// Draws a pair, its augmentation and its mask(s) from `rng`.
FramePair sample_pair(const std::vector<Sequence>& data, const TrainConfig& config, int grid,
                      Rng& rng);

/// Full mutable state of a run; what checkpoints capture.
struct TrainerState {
  DualParams dual;
  AdamWState optimizer;
  Rng rng;
  int64_t step = 0;
};

/// Online/target masked-reconstruction training loop.
class Trainer {
 public:
  explicit Trainer(RunConfig config);

  const RunConfig& config() const { return config_; }
  const MaskedConvAutoencoder& model() const { return model_; }
  TrainerState& state() { return state_; }
  const TrainerState& state() const { return state_; }

  /// Draws `batch_size` pairs from the trainer's generator.
  std::vector<FramePair> next_batch(const std::vector<Sequence>& data);

  /// Forward both branches, backward through the online branch, AdamW, EMA.
  /// Throws NumericError (state untouched) when a loss is non-finite.
  LossReport train_step(const std::vector<FramePair>& batch);

  /// next_batch + train_step.
  LossReport step(const std::vector<Sequence>& data) { return train_step(next_batch(data)); }

  double current_lr() const;

  /// Replaces the state after checking it matches this architecture.
  void restore(TrainerState state);

 private:
  RunConfig config_;
  MaskedConvAutoencoder model_;
  TrainerState state_;
};

/// Reconstruction forward for one branch: predictions, targets and masks.
struct BranchOutput {
  Tensor pred;
  Tensor targets;
};
BranchOutput run_branch(const MaskedConvAutoencoder& model, const ParamSet& params,
                        const Tensor& frames, const std::vector<MaskGrid>& masks,
                        bool norm_pix_loss);

/// Stacks [3,H,W] frames into [N,3,H,W].
Tensor stack_frames(const std::vector<Tensor>& frames);

}  // namespace mvm
