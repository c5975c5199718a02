#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvm/rng.hpp"

namespace mvm {

/// Patch-level visibility at the coarsest encoder resolution.
struct MaskGrid {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<uint8_t> visible;  // row-major, 1 = visible
  double ratio = 0.0;
  uint64_t seed = 0;

  int cells() const { return grid_h * grid_w; }
  int masked_count() const;
  bool is_visible(int y, int x) const { return visible[static_cast<size_t>(y * grid_w + x)] != 0; }
  bool operator==(const MaskGrid&) const = default;
};

/// Nearest-neighbor upsampled view of a MaskGrid at one stage resolution.
struct MaskView {
  int stage_h = 0;
  int stage_w = 0;
  int block_h = 1;  // stage sites per coarse cell, vertically
  int block_w = 1;
  std::vector<uint8_t> visible;

  bool is_visible(int y, int x) const { return visible[static_cast<size_t>(y * stage_w + x)] != 0; }
  bool operator==(const MaskView&) const = default;
};

/// Masks exactly floor(ratio * cells) cells chosen by a Fisher-Yates shuffle
/// seeded with `seed`. Throws for ratio outside [0, 1) or empty grids.
MaskGrid sample_mask(int grid_h, int grid_w, double ratio, uint64_t seed);

/// Draws a fresh seed from `rng` and samples with it.
MaskGrid sample_mask(int grid_h, int grid_w, double ratio, Rng& rng);

/// Two independent draws with the same ratio (asymmetric-masking ablation).
std::pair<MaskGrid, MaskGrid> asymmetric_pair(int grid_h, int grid_w, double ratio, Rng& rng);

MaskView view_at(const MaskGrid& mask, int stage_h, int stage_w);

/// Block-AND downsampling by an integer factor. The factor must divide the
/// view's block size so the result stays block-constant.
MaskView downsample(const MaskView& view, int factor);

/// Visibility for a batch of samples at one resolution, flattened N*H*W.
class SiteMask {
 public:
  SiteMask() = default;
  static SiteMask from_views(const std::vector<MaskView>& views);
  static SiteMask from_grids(const std::vector<MaskGrid>& grids, int h, int w);
  static SiteMask all_visible(int n, int h, int w);

  int batch() const { return n_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int block_h() const { return block_h_; }
  int block_w() const { return block_w_; }
  std::span<const uint8_t> visible() const { return visible_; }
  bool is_visible(int b, int y, int x) const {
    return visible_[static_cast<size_t>((b * h_ + y) * w_ + x)] != 0;
  }
  bool all() const;

  /// Block-AND downsampling; throws when `factor` does not divide the block.
  SiteMask downsample(int factor) const;

  bool operator==(const SiteMask&) const = default;

 private:
  int n_ = 0, h_ = 0, w_ = 0;
  // A fully visible mask is block-constant at any granularity; 0 = unbounded.
  int block_h_ = 0, block_w_ = 0;
  std::vector<uint8_t> visible_;
};

/// Debug dump: "MASK <h> <w> <ratio> <seed>" then one line of '0'/'1' per
/// row, '1' marking a visible cell.
std::string dump_mask(const MaskGrid& mask);
MaskGrid parse_mask_dump(const std::string& text);

}  // namespace mvm
