#include <cmath>
#include <numbers>

#include "mvm/ops.hpp"

namespace mvm {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void check_site_mask(const char* op, const Tensor& x, std::span<const uint8_t> vis) {
  if (x.dim() != 4) {
    throw DimensionError(std::string(op) + ": expected [N,C,H,W], got " + to_string(x.shape()));
  }
  if (static_cast<int64_t>(vis.size()) != x.size(0) * x.size(2) * x.size(3)) {
    throw DimensionError(std::string(op) + ": site mask holds " + std::to_string(vis.size()) +
                         " sites, tensor " + to_string(x.shape()) + " needs N*H*W");
  }
}

}  // namespace

constexpr double kInvSqrt2 = 0.70710678118654752440;

Tensor gelu(const Tensor& x) {
  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * kInvSqrt2));
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       const auto& v = x.values();
                       const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
                       for (size_t i = 0; i < v.size(); ++i) {
                         const double cdf = 0.5 * (1.0 + std::erf(v[i] * kInvSqrt2));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v[i] * v[i]);
                         (*gi[0])[i] += g[i] * (cdf + v[i] * pdf);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       for (auto* buf : gi) {
                         if (!buf) continue;
                         for (size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x},
                     [factor](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       for (size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({}, {s}, {x},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       for (auto& v : *gi[0]) v += g[0];
                     });
}

Tensor mse_mean(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse_mean", pred, target);
  const auto& p = pred.values();
  const auto& t = target.values();
  if (p.empty()) throw DimensionError("mse_mean: empty operands");
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    s += d * d;
  }
  const double n = static_cast<double>(p.size());
  return make_result({}, {s / n}, {pred, target},
                     [pred, target, n](std::span<const double> g,
                                       std::span<std::vector<double>* const> gi) {
                       const auto& p = pred.values();
                       const auto& t = target.values();
                       for (size_t i = 0; i < p.size(); ++i) {
                         const double d = 2.0 * (p[i] - t[i]) / n * g[0];
                         if (gi[0]) (*gi[0])[i] += d;
                         if (gi[1]) (*gi[1])[i] -= d;
                       }
                     });
}

Tensor select_sites(const Tensor& x, std::span<const uint8_t> site_visible) {
  check_site_mask("select_sites", x, site_visible);
  const int64_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  std::vector<uint8_t> vis(site_visible.begin(), site_visible.end());
  std::vector<double> out(x.values().size());
  const auto& v = x.values();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t s = 0; s < hw; ++s) {
        const size_t at = static_cast<size_t>((b * c + ch) * hw + s);
        out[at] = vis[static_cast<size_t>(b * hw + s)] ? v[at] : 0.0;
      }
  return make_result(x.shape(), std::move(out), {x},
                     [vis = std::move(vis), n, c, hw](std::span<const double> g,
                                                      std::span<std::vector<double>* const> gi) {
                       for (int64_t b = 0; b < n; ++b)
                         for (int64_t ch = 0; ch < c; ++ch)
                           for (int64_t s = 0; s < hw; ++s) {
                             if (!vis[static_cast<size_t>(b * hw + s)]) continue;
                             const size_t at = static_cast<size_t>((b * c + ch) * hw + s);
                             (*gi[0])[at] += g[at];
                           }
                     });
}

Tensor fill_sites(const Tensor& x, const Tensor& token, std::span<const uint8_t> site_visible) {
  check_site_mask("fill_sites", x, site_visible);
  const int64_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  if (token.dim() != 1 || token.size(0) != c) {
    throw DimensionError("fill_sites: token " + to_string(token.shape()) +
                         " does not match channel axis of " + to_string(x.shape()));
  }
  std::vector<uint8_t> vis(site_visible.begin(), site_visible.end());
  std::vector<double> out(x.values().size());
  const auto& v = x.values();
  const auto& tk = token.values();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t s = 0; s < hw; ++s) {
        const size_t at = static_cast<size_t>((b * c + ch) * hw + s);
        out[at] = vis[static_cast<size_t>(b * hw + s)] ? v[at] : tk[static_cast<size_t>(ch)];
      }
  return make_result(x.shape(), std::move(out), {x, token},
                     [vis = std::move(vis), n, c, hw](std::span<const double> g,
                                                      std::span<std::vector<double>* const> gi) {
                       for (int64_t b = 0; b < n; ++b)
                         for (int64_t ch = 0; ch < c; ++ch)
                           for (int64_t s = 0; s < hw; ++s) {
                             const size_t at = static_cast<size_t>((b * c + ch) * hw + s);
                             if (vis[static_cast<size_t>(b * hw + s)]) {
                               if (gi[0]) (*gi[0])[at] += g[at];
                             } else if (gi[1]) {
                               (*gi[1])[static_cast<size_t>(ch)] += g[at];
                             }
                           }
                     });
}

Tensor channels_to_rows(const Tensor& x) {
  if (x.dim() != 4) {
    throw DimensionError("channels_to_rows: expected [N,D,h,w], got " + to_string(x.shape()));
  }
  const int64_t n = x.size(0), d = x.size(1), hw = x.size(2) * x.size(3);
  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < d; ++ch)
      for (int64_t s = 0; s < hw; ++s)
        out[static_cast<size_t>((b * hw + s) * d + ch)] = v[static_cast<size_t>((b * d + ch) * hw + s)];
  return make_result({n, hw, d}, std::move(out), {x},
                     [n, d, hw](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       for (int64_t b = 0; b < n; ++b)
                         for (int64_t ch = 0; ch < d; ++ch)
                           for (int64_t s = 0; s < hw; ++s)
                             (*gi[0])[static_cast<size_t>((b * d + ch) * hw + s)] +=
                                 g[static_cast<size_t>((b * hw + s) * d + ch)];
                     });
}

Tensor masked_rows_mse(const Tensor& pred, const Tensor& target, std::span<const uint8_t> selected) {
  require_same_shape("masked_rows_mse", pred, target);
  if (pred.dim() != 3) {
    throw DimensionError("masked_rows_mse: expected [N,G,D], got " + to_string(pred.shape()));
  }
  const int64_t rows = pred.size(0) * pred.size(1), d = pred.size(2);
  if (static_cast<int64_t>(selected.size()) != rows) {
    throw DimensionError("masked_rows_mse: " + std::to_string(selected.size()) +
                         " row flags for " + std::to_string(rows) + " rows");
  }
  std::vector<uint8_t> sel(selected.begin(), selected.end());
  int64_t count = 0;
  for (auto s : sel) count += s ? 1 : 0;
  if (count == 0) throw std::invalid_argument("masked_rows_mse: empty mask (no masked patches)");

  const auto& p = pred.values();
  const auto& t = target.values();
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (!sel[static_cast<size_t>(r)]) continue;
    double row = 0.0;
    for (int64_t k = 0; k < d; ++k) {
      const double diff = p[static_cast<size_t>(r * d + k)] - t[static_cast<size_t>(r * d + k)];
      row += diff * diff;
    }
    total += row / static_cast<double>(d);
  }
  const double denom = static_cast<double>(count);
  return make_result({}, {total / denom}, {pred, target},
                     [pred, target, sel = std::move(sel), rows, d, denom](
                         std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       const auto& p = pred.values();
                       const auto& t = target.values();
                       const double f = 2.0 * g[0] / (denom * static_cast<double>(d));
                       for (int64_t r = 0; r < rows; ++r) {
                         if (!sel[static_cast<size_t>(r)]) continue;
                         for (int64_t k = 0; k < d; ++k) {
                           const size_t at = static_cast<size_t>(r * d + k);
                           const double gd = f * (p[at] - t[at]);
                           if (gi[0]) (*gi[0])[at] += gd;
                           if (gi[1]) (*gi[1])[at] -= gd;
                         }
                       }
                     });
}

}  // namespace mvm
