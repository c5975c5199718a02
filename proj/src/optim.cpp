#include "mvm/optim.hpp"

#include <cmath>
#include <numbers>

namespace mvm {

AdamWState AdamWState::zeros_like(const ParamSet& params) {
  AdamWState s;
  for (const auto& p : params) {
    s.m.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
    s.v.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
  }
  return s;
}

void adamw_update(ParamSet& params, AdamWState& state, double lr, double beta1, double beta2,
                  double weight_decay, double eps) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adamw_update: optimizer state does not match parameters");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& value = params[i].value;
    if (state.m[i].size() != static_cast<size_t>(value.numel())) {
      throw std::invalid_argument("adamw_update: moment size mismatch for " + params[i].name);
    }
    for (double g : value.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + params[i].name);
    }
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& value = params[i].value;
    auto theta = value.data();
    auto grad = value.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool decay = params[i].decay && weight_decay != 0.0;
    for (size_t k = 0; k < theta.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = beta1 * m[k] + (1.0 - beta1) * g;
      v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
      if (decay) theta[k] -= lr * weight_decay * theta[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double lr_at(int64_t step, const TrainConfig& config) {
  const int64_t total = config.total_steps();
  const int64_t warmup = config.steps_per_epoch() * config.warmup_epochs;
  if (step < 0 || step > total) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total) + "]");
  }
  if (warmup > 0 && step <= warmup) {
    return config.lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(std::max<int64_t>(1, total - warmup));
  return config.min_lr +
         (config.lr - config.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mvm
