#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvm/masking.hpp"
#include "mvm/tensor.hpp"

namespace mvm {

struct LossReport {
  double l_online = 0.0;
  double l_target = 0.0;
  double l_consistency = 0.0;
  double l_total = 0.0;
  double gamma = 0.0;
};

/// Row flags (1 = masked patch) for a batch of grids, laid out N*G.
std::vector<uint8_t> masked_rows(const std::vector<MaskGrid>& masks);

/// Mean over masked patches of the per-patch mean squared error between the
/// online reconstruction and its targets. Differentiable in `pred`.
Tensor online_loss(const Tensor& targets, const Tensor& pred, const std::vector<MaskGrid>& masks);

/// Same quantity for the target branch, evaluated without recording a graph.
Tensor target_loss(const Tensor& targets, const Tensor& pred, const std::vector<MaskGrid>& masks);

/// Masked-patch MSE between online and target reconstructions. The target
/// reconstruction is detached, so gradients reach the online branch only.
///
/// With `symmetric` both frames must share identical masks (throws
/// otherwise). In asymmetric mode the average runs over patches masked in
/// both frames, and is zero when there are none.
Tensor consistency_loss(const Tensor& pred_online, const Tensor& pred_target,
                        const std::vector<MaskGrid>& masks_online,
                        const std::vector<MaskGrid>& masks_target, bool symmetric = true);

/// l_total = l_online + l_target + gamma * l_consistency.
LossReport total_loss(double l_online, double l_target, double l_consistency, double gamma);

/// Loss CSV: header "step,l_online,l_target,l_consistency,l_total,lr" and one
/// row per step (1-based), doubles printed with 17 significant digits.
std::string loss_csv_header();
std::string loss_csv_row(int64_t step, const LossReport& report, double lr);

}  // namespace mvm
