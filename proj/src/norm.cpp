#include <cmath>
#include <memory>

#include "mvm/ops.hpp"

namespace mvm {

namespace {

void check_affine(const char* op, const Tensor& input, const Tensor& gamma, const Tensor& beta) {
  if (input.dim() != 4) {
    throw DimensionError(std::string(op) + ": input must be [N,C,H,W], got " +
                         to_string(input.shape()));
  }
  const int64_t c = input.size(1);
  for (const Tensor* t : {&gamma, &beta}) {
    if (t->dim() != 1 || t->size(0) != c) {
      throw DimensionError(std::string(op) + ": affine parameter " + to_string(t->shape()) +
                           " does not match channel axis 1 of " + to_string(input.shape()));
    }
  }
}

}  // namespace

Tensor layer_norm_channels(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                           double eps) {
  check_affine("layer_norm_channels", input, gamma, beta);
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm_channels: eps must be > 0");
  const int64_t n = input.size(0), c = input.size(1), hw = input.size(2) * input.size(3);
  const auto& x = input.values();
  const auto& ga = gamma.values();
  const auto& be = beta.values();

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(n * hw));
  std::vector<double> out(x.size());
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t s = 0; s < hw; ++s) {
      const size_t base = static_cast<size_t>(b * c * hw + s);
      double mean = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) mean += x[base + ch * hw];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double d = x[base + ch * hw] - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double r = 1.0 / std::sqrt(var + eps);
      (*rstd)[static_cast<size_t>(b * hw + s)] = r;
      for (int64_t ch = 0; ch < c; ++ch) {
        const size_t at = base + ch * hw;
        const double xh = (x[at] - mean) * r;
        (*xhat)[at] = xh;
        out[at] = ga[static_cast<size_t>(ch)] * xh + be[static_cast<size_t>(ch)];
      }
    }
  }

  return make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [gamma, xhat, rstd, n, c, hw](std::span<const double> g,
                                    std::span<std::vector<double>* const> gi) {
        const auto& ga = gamma.values();
        const auto& xh = *xhat;
        for (int64_t b = 0; b < n; ++b) {
          for (int64_t s = 0; s < hw; ++s) {
            const size_t base = static_cast<size_t>(b * c * hw + s);
            double mean_g = 0.0, mean_gx = 0.0;
            for (int64_t ch = 0; ch < c; ++ch) {
              const size_t at = base + ch * hw;
              const double gh = g[at] * ga[static_cast<size_t>(ch)];
              mean_g += gh;
              mean_gx += gh * xh[at];
              if (gi[1]) (*gi[1])[static_cast<size_t>(ch)] += g[at] * xh[at];
              if (gi[2]) (*gi[2])[static_cast<size_t>(ch)] += g[at];
            }
            if (!gi[0]) continue;
            mean_g /= static_cast<double>(c);
            mean_gx /= static_cast<double>(c);
            const double r = (*rstd)[static_cast<size_t>(b * hw + s)];
            for (int64_t ch = 0; ch < c; ++ch) {
              const size_t at = base + ch * hw;
              const double gh = g[at] * ga[static_cast<size_t>(ch)];
              (*gi[0])[at] += r * (gh - mean_g - xh[at] * mean_gx);
            }
          }
        }
      });
}

Tensor grn(const Tensor& input, const Tensor& gamma, const Tensor& beta,
           std::span<const uint8_t> site_visible) {
  // Added to the channel-mean response, as in the reference block.
  constexpr double kDenomEps = 1e-6;
  check_affine("grn", input, gamma, beta);
  const int64_t n = input.size(0), c = input.size(1), hw = input.size(2) * input.size(3);
  const bool masked = !site_visible.empty();
  if (masked && static_cast<int64_t>(site_visible.size()) != n * hw) {
    throw DimensionError("grn: site mask holds " + std::to_string(site_visible.size()) +
                         " sites, input has " + std::to_string(n * hw));
  }
  std::vector<uint8_t> vis(site_visible.begin(), site_visible.end());
  if (masked) {
    for (int64_t b = 0; b < n; ++b) {
      bool any = false;
      for (int64_t s = 0; s < hw && !any; ++s) any = vis[static_cast<size_t>(b * hw + s)] != 0;
      if (!any) throw std::invalid_argument("grn: no visible sites in sample " + std::to_string(b));
    }
  }
  auto counts = [vis = std::move(vis), masked, hw](int64_t b, int64_t s) {
    return !masked || vis[static_cast<size_t>(b * hw + s)] != 0;
  };

  const auto& x = input.values();
  const auto& ga = gamma.values();
  const auto& be = beta.values();
  // Per (sample, channel): response G, normalized response N; per sample: mean G.
  auto resp = std::make_shared<std::vector<double>>(static_cast<size_t>(n * c));
  auto nresp = std::make_shared<std::vector<double>>(static_cast<size_t>(n * c));
  auto denom = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int64_t b = 0; b < n; ++b) {
    double mean_resp = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = x.data() + (b * c + ch) * hw;
      double ss = 0.0;
      for (int64_t s = 0; s < hw; ++s)
        if (counts(b, s)) ss += plane[s] * plane[s];
      const double r = std::sqrt(ss);
      (*resp)[static_cast<size_t>(b * c + ch)] = r;
      mean_resp += r;
    }
    mean_resp /= static_cast<double>(c);
    const double d = mean_resp + kDenomEps;
    (*denom)[static_cast<size_t>(b)] = d;
    for (int64_t ch = 0; ch < c; ++ch) {
      (*nresp)[static_cast<size_t>(b * c + ch)] = (*resp)[static_cast<size_t>(b * c + ch)] / d;
    }
  }

  std::vector<double> out(x.size());
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double nr = (*nresp)[static_cast<size_t>(b * c + ch)];
      const double gch = ga[static_cast<size_t>(ch)], bch = be[static_cast<size_t>(ch)];
      const size_t off = static_cast<size_t>((b * c + ch) * hw);
      for (int64_t s = 0; s < hw; ++s) {
        const double v = x[off + s];
        out[off + s] = gch * (v * nr) + bch + v;
      }
    }
  }

  return make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, resp, nresp, denom, counts, n, c, hw](
          std::span<const double> g, std::span<std::vector<double>* const> gi) {
        const auto& x = input.values();
        const auto& ga = gamma.values();
        std::vector<double> g_nresp(static_cast<size_t>(c));
        for (int64_t b = 0; b < n; ++b) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const size_t off = static_cast<size_t>((b * c + ch) * hw);
            const double nr = (*nresp)[static_cast<size_t>(b * c + ch)];
            const double gch = ga[static_cast<size_t>(ch)];
            double sum_gx = 0.0, sum_g = 0.0;
            for (int64_t s = 0; s < hw; ++s) {
              sum_gx += g[off + s] * x[off + s];
              sum_g += g[off + s];
            }
            if (gi[1]) (*gi[1])[static_cast<size_t>(ch)] += sum_gx * nr;
            if (gi[2]) (*gi[2])[static_cast<size_t>(ch)] += sum_g;
            g_nresp[static_cast<size_t>(ch)] = gch * sum_gx;
            if (gi[0]) {
              for (int64_t s = 0; s < hw; ++s) (*gi[0])[off + s] += g[off + s] * (1.0 + gch * nr);
            }
          }
          if (!gi[0]) continue;
          // nr_c = G_c / (mean_j G_j + eps)
          const double d = (*denom)[static_cast<size_t>(b)];
          double cross = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) {
            cross += g_nresp[static_cast<size_t>(ch)] * (*resp)[static_cast<size_t>(b * c + ch)];
          }
          cross /= d * d * static_cast<double>(c);
          for (int64_t ch = 0; ch < c; ++ch) {
            const double r = (*resp)[static_cast<size_t>(b * c + ch)];
            if (r == 0.0) continue;
            const double g_resp = g_nresp[static_cast<size_t>(ch)] / d - cross;
            const size_t off = static_cast<size_t>((b * c + ch) * hw);
            for (int64_t s = 0; s < hw; ++s) {
              if (counts(b, s)) (*gi[0])[off + s] += g_resp * x[off + s] / r;
            }
          }
        }
      });
}

}  // namespace mvm
