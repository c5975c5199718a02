#include <memory>

#include "mvm/ops.hpp"

namespace mvm {

namespace {

struct ConvGeometry {
  int64_t n, c, h, w;
  int64_t k, kh, kw;
  int64_t ho, wo;
  int stride, padding, groups;
  int64_t cg() const { return c / groups; }
  int64_t kg() const { return k / groups; }
  int64_t out_sites() const { return ho * wo; }
};

ConvGeometry check_conv(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride, int padding, int groups) {
  if (input.dim() != 4) {
    throw DimensionError("conv2d input must be [N,C,H,W], got " + to_string(input.shape()));
  }
  if (weight.dim() != 4) {
    throw DimensionError("conv2d weight must be [K,C/g,kh,kw], got " +
                         to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0 || groups < 1) {
    throw std::invalid_argument("conv2d: stride >= 1, padding >= 0, groups >= 1 required");
  }
  ConvGeometry g{};
  g.n = input.size(0);
  g.c = input.size(1);
  g.h = input.size(2);
  g.w = input.size(3);
  g.k = weight.size(0);
  g.kh = weight.size(2);
  g.kw = weight.size(3);
  g.stride = stride;
  g.padding = padding;
  g.groups = groups;
  if (g.c % groups != 0 || g.k % groups != 0) {
    throw DimensionError("conv2d: channels C=" + std::to_string(g.c) + " and K=" +
                         std::to_string(g.k) + " must be divisible by groups=" +
                         std::to_string(groups));
  }
  if (weight.size(1) != g.cg()) {
    throw DimensionError("conv2d: weight axis 1 is " + std::to_string(weight.size(1)) +
                         ", expected C/groups=" + std::to_string(g.cg()));
  }
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw DimensionError("conv2d: padded input " + std::to_string(g.h + 2 * padding) + "x" +
                         std::to_string(g.w + 2 * padding) + " smaller than kernel " +
                         std::to_string(g.kh) + "x" + std::to_string(g.kw) + " (axes 2,3)");
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != g.k)) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(g.k) + "], got " +
                         to_string(bias.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

// col[(c*kh + i)*kw + j][n*L + oy*wo + ox] for the channels of one group.
void im2col(const ConvGeometry& g, const double* in, int64_t group, double* col) {
  const int64_t cols = g.n * g.out_sites();
  for (int64_t c = 0; c < g.cg(); ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t n = 0; n < g.n; ++n) {
          const double* plane = in + ((n * g.c) + group * g.cg() + c) * g.h * g.w;
          double* dst = row + n * g.out_sites();
          for (int64_t oy = 0; oy < g.ho; ++oy) {
            const int64_t iy = oy * g.stride - g.padding + i;
            for (int64_t ox = 0; ox < g.wo; ++ox) {
              const int64_t ix = ox * g.stride - g.padding + j;
              dst[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                        ? plane[iy * g.w + ix]
                                        : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, int64_t group, double* in_grad) {
  const int64_t cols = g.n * g.out_sites();
  for (int64_t c = 0; c < g.cg(); ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t n = 0; n < g.n; ++n) {
          double* plane = in_grad + ((n * g.c) + group * g.cg() + c) * g.h * g.w;
          const double* src = row + n * g.out_sites();
          for (int64_t oy = 0; oy < g.ho; ++oy) {
            const int64_t iy = oy * g.stride - g.padding + i;
            if (iy < 0 || iy >= g.h) continue;
            for (int64_t ox = 0; ox < g.wo; ++ox) {
              const int64_t ix = ox * g.stride - g.padding + j;
              if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

Tensor depthwise(const Tensor& input, const Tensor& weight, const Tensor& bias,
                 const ConvGeometry& g) {
  const auto& x = input.values();
  const auto& wt = weight.values();
  std::vector<double> out(static_cast<size_t>(g.n * g.k * g.out_sites()));
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t c = 0; c < g.c; ++c) {
      const double* plane = x.data() + (n * g.c + c) * g.h * g.w;
      const double* kern = wt.data() + c * g.kh * g.kw;
      double* dst = out.data() + (n * g.c + c) * g.out_sites();
      const double b = bias.defined() ? bias.values()[static_cast<size_t>(c)] : 0.0;
      for (int64_t oy = 0; oy < g.ho; ++oy) {
        for (int64_t ox = 0; ox < g.wo; ++ox) {
          double acc = 0.0;
          for (int64_t i = 0; i < g.kh; ++i) {
            const int64_t iy = oy * g.stride - g.padding + i;
            if (iy < 0 || iy >= g.h) continue;
            for (int64_t j = 0; j < g.kw; ++j) {
              const int64_t ix = ox * g.stride - g.padding + j;
              if (ix < 0 || ix >= g.w) continue;
              acc += kern[i * g.kw + j] * plane[iy * g.w + ix];
            }
          }
          dst[oy * g.wo + ox] = acc + b;
        }
      }
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {g.n, g.k, g.ho, g.wo}, std::move(out), std::move(inputs),
      [input, weight, g](std::span<const double> gout, std::span<std::vector<double>* const> gi) {
        const auto& x = input.values();
        const auto& wt = weight.values();
        for (int64_t n = 0; n < g.n; ++n) {
          for (int64_t c = 0; c < g.c; ++c) {
            const size_t plane_off = static_cast<size_t>((n * g.c + c) * g.h * g.w);
            const double* src = gout.data() + (n * g.c + c) * g.out_sites();
            for (int64_t oy = 0; oy < g.ho; ++oy) {
              for (int64_t ox = 0; ox < g.wo; ++ox) {
                const double go = src[oy * g.wo + ox];
                if (gi.size() > 2 && gi[2]) (*gi[2])[static_cast<size_t>(c)] += go;
                for (int64_t i = 0; i < g.kh; ++i) {
                  const int64_t iy = oy * g.stride - g.padding + i;
                  if (iy < 0 || iy >= g.h) continue;
                  for (int64_t j = 0; j < g.kw; ++j) {
                    const int64_t ix = ox * g.stride - g.padding + j;
                    if (ix < 0 || ix >= g.w) continue;
                    const size_t at = plane_off + static_cast<size_t>(iy * g.w + ix);
                    const size_t wk = static_cast<size_t>(c * g.kh * g.kw + i * g.kw + j);
                    if (gi[0]) (*gi[0])[at] += wt[wk] * go;
                    if (gi[1]) (*gi[1])[wk] += x[at] * go;
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding, int groups) {
  const ConvGeometry g = check_conv(input, weight, bias, stride, padding, groups);
  if (groups > 1 && groups == g.c && g.k == g.c) return depthwise(input, weight, bias, g);

  const int64_t patch = g.cg() * g.kh * g.kw;
  const int64_t cols = g.n * g.out_sites();
  // Per-group column buffers are reused by backward.
  auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(groups * patch * cols));
  std::vector<double> out(static_cast<size_t>(g.n * g.k * g.out_sites()));
  std::vector<double> tmp(static_cast<size_t>(g.kg() * cols));
  for (int64_t grp = 0; grp < groups; ++grp) {
    double* gcol = col->data() + grp * patch * cols;
    im2col(g, input.values().data(), grp, gcol);
    gemm(false, false, g.kg(), cols, patch, weight.values().data() + grp * g.kg() * patch, gcol,
         tmp.data(), false);
    for (int64_t k = 0; k < g.kg(); ++k) {
      const int64_t oc = grp * g.kg() + k;
      const double b = bias.defined() ? bias.values()[static_cast<size_t>(oc)] : 0.0;
      for (int64_t n = 0; n < g.n; ++n) {
        const double* src = tmp.data() + k * cols + n * g.out_sites();
        double* dst = out.data() + (n * g.k + oc) * g.out_sites();
        for (int64_t s = 0; s < g.out_sites(); ++s) dst[s] = src[s] + b;
      }
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {g.n, g.k, g.ho, g.wo}, std::move(out), std::move(inputs),
      [weight, g, col, patch, cols](std::span<const double> gout,
                                    std::span<std::vector<double>* const> gi) {
        std::vector<double> go(static_cast<size_t>(g.kg() * cols));
        std::vector<double> gcol;
        for (int64_t grp = 0; grp < g.groups; ++grp) {
          for (int64_t k = 0; k < g.kg(); ++k) {
            const int64_t oc = grp * g.kg() + k;
            double bsum = 0.0;
            for (int64_t n = 0; n < g.n; ++n) {
              const double* src = gout.data() + (n * g.k + oc) * g.out_sites();
              double* dst = go.data() + k * cols + n * g.out_sites();
              for (int64_t s = 0; s < g.out_sites(); ++s) {
                dst[s] = src[s];
                bsum += src[s];
              }
            }
            if (gi.size() > 2 && gi[2]) (*gi[2])[static_cast<size_t>(oc)] += bsum;
          }
          const double* xcol = col->data() + grp * patch * cols;
          if (gi[1]) {
            gemm(false, true, g.kg(), patch, cols, go.data(), xcol,
                 gi[1]->data() + grp * g.kg() * patch, true);
          }
          if (gi[0]) {
            gcol.assign(static_cast<size_t>(patch * cols), 0.0);
            gemm(true, false, patch, cols, g.kg(), weight.values().data() + grp * g.kg() * patch,
                 go.data(), gcol.data(), false);
            col2im_add(g, gcol.data(), grp, gi[0]->data());
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() != 2 || weight.dim() != 2 || x.size(1) != weight.size(1)) {
    throw DimensionError("linear: x " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " on axis 1");
  }
  const int64_t m = x.size(0), in = x.size(1), outf = weight.size(0);
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != outf)) {
    throw DimensionError("linear: bias must be [" + std::to_string(outf) + "]");
  }
  std::vector<double> out(static_cast<size_t>(m * outf));
  gemm(false, true, m, outf, in, x.values().data(), weight.values().data(), out.data(), false);
  if (bias.defined()) {
    for (int64_t r = 0; r < m; ++r)
      for (int64_t o = 0; o < outf; ++o)
        out[static_cast<size_t>(r * outf + o)] += bias.values()[static_cast<size_t>(o)];
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({m, outf}, std::move(out), std::move(inputs),
                     [x, weight, m, in, outf](std::span<const double> g,
                                              std::span<std::vector<double>* const> gi) {
                       if (gi[0]) {
                         gemm(false, false, m, in, outf, g.data(), weight.values().data(),
                              gi[0]->data(), true);
                       }
                       if (gi[1]) {
                         gemm(true, false, outf, in, m, g.data(), x.values().data(),
                              gi[1]->data(), true);
                       }
                       if (gi.size() > 2 && gi[2]) {
                         for (int64_t r = 0; r < m; ++r)
                           for (int64_t o = 0; o < outf; ++o)
                             (*gi[2])[static_cast<size_t>(o)] += g[static_cast<size_t>(r * outf + o)];
                       }
                     });
}

}  // namespace mvm
