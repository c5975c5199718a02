#pragma once

#include <string>
#include <vector>

#include "mvm/masking.hpp"
#include "mvm/params.hpp"
#include "mvm/rng.hpp"
#include "mvm/sparse.hpp"

namespace mvm {

/// Raised for inconsistent architecture or input geometry.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BlockKind { convnext_v2, convnext_v1, basic_residual };

std::string to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& text);

struct EncoderConfig {
  int stem_factor = 4;
  std::vector<int> stage_depths{2, 2};
  std::vector<int> stage_widths{32, 64};
  BlockKind block_kind = BlockKind::convnext_v2;
  int downsample_factor_per_stage = 2;

  int num_stages() const { return static_cast<int>(stage_depths.size()); }
  /// Input pixels per final-stage site along one axis.
  int total_downsampling() const;
  /// Pixels per site at the output of stage `s`.
  int stride_at(int stage) const;
  void validate() const;
};

struct DecoderConfig {
  int depth = 1;
  int width = 512;
  int patch_size = 8;
  int out_channels = 3;

  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  /// Checks the patch size equals the encoder's total downsampling.
  void validate() const;
};

/// Final-stage latent plus every stage's output.
struct EncoderOutput {
  std::vector<SparseActivation> stages;
  const SparseActivation& latent() const { return stages.back(); }
};

/// Hierarchical sparse ConvNet encoder with a single-resolution dense decoder
/// that fills masked sites with a learned token and regresses patch pixels.
class MaskedConvAutoencoder {
 public:
  explicit MaskedConvAutoencoder(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// Truncated-normal(0.02) weights, zero biases, unit/zero LayerNorm affine,
  /// zero GRN affine, truncated-normal mask token.
  ParamSet init_params(Rng& rng) const;

  /// Sparse forward. `masks` holds one grid per sample at the final-stage
  /// resolution; masked pixels never reach any visible activation.
  EncoderOutput encode(const Tensor& frames, const std::vector<MaskGrid>& masks,
                       const ParamSet& params) const;

  /// Same weights through plain dense ops (deployment path). Returns the
  /// output of every stage.
  std::vector<Tensor> encode_dense(const Tensor& frames, const ParamSet& params) const;

  /// Per-position pixel predictions [N, grid_h*grid_w, P*P*out_channels].
  Tensor decode(const SparseActivation& latent, const std::vector<MaskGrid>& masks,
                const ParamSet& params) const;

  /// Grid extent for an input side length; throws on divisibility errors.
  int grid_extent(int64_t pixels) const;

 private:
  void check_frames(const Tensor& frames) const;
  ModelConfig config_;
};

/// Non-overlapping patches as rows [N, (H/P)*(W/P), P*P*C], element order
/// (row in patch, column in patch, channel). With `normalize` every row is
/// standardized by its own mean and sqrt(var + eps). No graph is recorded.
Tensor patchify_targets(const Tensor& frames, int patch_size, bool normalize, double eps = 1e-6);

/// Inverse layout of `patchify_targets` without normalization.
Tensor unpatchify(const Tensor& rows, int patch_size, int channels, int height, int width);

struct Reconstruction {
  Tensor masked_input;    // masked patches set to 0.5
  Tensor reconstruction;  // visible patches copied, masked ones predicted
};

/// Visualizes one forward pass. With `norm_pix_loss` each predicted patch is
/// mapped back through the true patch's mean and sqrt(var + eps). Output
/// values are clamped to [0, 1].
Reconstruction reconstruct(const MaskedConvAutoencoder& model, const ParamSet& params,
                           const Tensor& frames, const std::vector<MaskGrid>& masks,
                           bool norm_pix_loss, double eps = 1e-6);

}  // namespace mvm
