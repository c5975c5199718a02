#include "mvm/objective.hpp"

#include <cstdio>
#include <stdexcept>

#include "mvm/ops.hpp"

namespace mvm {

std::vector<uint8_t> masked_rows(const std::vector<MaskGrid>& masks) {
  std::vector<uint8_t> rows;
  for (const auto& m : masks)
    for (auto v : m.visible) rows.push_back(v ? 0 : 1);
  return rows;
}

Tensor online_loss(const Tensor& targets, const Tensor& pred, const std::vector<MaskGrid>& masks) {
  return masked_rows_mse(pred, targets, masked_rows(masks));
}

Tensor target_loss(const Tensor& targets, const Tensor& pred, const std::vector<MaskGrid>& masks) {
  NoGradGuard no_grad;
  return masked_rows_mse(pred.detach(), targets.detach(), masked_rows(masks));
}

Tensor consistency_loss(const Tensor& pred_online, const Tensor& pred_target,
                        const std::vector<MaskGrid>& masks_online,
                        const std::vector<MaskGrid>& masks_target, bool symmetric) {
  if (masks_online.size() != masks_target.size()) {
    throw std::invalid_argument("consistency_loss: mask batches differ in size");
  }
  std::vector<uint8_t> rows = masked_rows(masks_online);
  if (symmetric) {
    for (size_t i = 0; i < masks_online.size(); ++i) {
      if (masks_online[i].visible != masks_target[i].visible) {
        throw std::invalid_argument("consistency_loss: masks of sample " + std::to_string(i) +
                                    " differ in symmetric mode");
      }
    }
  } else {
    const std::vector<uint8_t> other = masked_rows(masks_target);
    if (other.size() != rows.size()) throw std::invalid_argument("consistency_loss: grid mismatch");
    bool any = false;
    for (size_t i = 0; i < rows.size(); ++i) {
      rows[i] = rows[i] && other[i];
      any = any || rows[i];
    }
    if (!any) return scale(sum(scale(pred_online, 0.0)), 0.0);
  }
  return masked_rows_mse(pred_online, pred_target.detach(), rows);
}

LossReport total_loss(double l_online, double l_target, double l_consistency, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("total_loss: gamma must be >= 0");
  LossReport r;
  r.l_online = l_online;
  r.l_target = l_target;
  r.l_consistency = l_consistency;
  r.gamma = gamma;
  r.l_total = l_online + l_target + gamma * l_consistency;
  return r;
}

std::string loss_csv_header() { return "step,l_online,l_target,l_consistency,l_total,lr\n"; }

std::string loss_csv_row(int64_t step, const LossReport& r, double lr) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(step),
                r.l_online, r.l_target, r.l_consistency, r.l_total, lr);
  return buf;
}

}  // namespace mvm
