#pragma once

#include <span>

#include "mvm/tensor.hpp"

namespace mvm {

// Convolution -----------------------------------------------------------------

/// Cross-correlation over NCHW input with weight [K, C/groups, kh, kw].
/// `bias` may be an undefined tensor. Depthwise (groups == C == K) takes a
/// direct path; everything else is im2col + GEMM per group.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0, int groups = 1);

/// Fully connected layer: x [M, in], weight [out, in], bias [out] -> [M, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Normalization ---------------------------------------------------------------

/// Per-site normalization across the channel axis of an NCHW tensor.
Tensor layer_norm_channels(const Tensor& input, const Tensor& gamma,
                           const Tensor& beta, double eps = 1e-6);

/// Global response normalization. Per sample and channel the L2 response is
/// taken over spatial sites (only sites with `site_visible[n*H*W + s] != 0`
/// when the span is non-empty), divided by its channel mean, and applied as
/// `gamma * x * nx + beta + x` at every site.
Tensor grn(const Tensor& input, const Tensor& gamma, const Tensor& beta,
           std::span<const uint8_t> site_visible = {});

// Elementwise and reductions ---------------------------------------------------

Tensor gelu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mse_mean(const Tensor& pred, const Tensor& target);

// Site masking (NCHW, mask is N*H*W with 1 = visible) -----------------------------

/// Zero at masked sites; passes values through at visible ones.
Tensor select_sites(const Tensor& x, std::span<const uint8_t> site_visible);

/// Replaces every masked site's channel vector with `token` [C].
Tensor fill_sites(const Tensor& x, const Tensor& token,
                  std::span<const uint8_t> site_visible);

// Patch layout ----------------------------------------------------------------

/// [N, D, h, w] -> [N, h*w, D]: one row per spatial position.
Tensor channels_to_rows(const Tensor& x);

/// Mean over selected rows of the per-row mean squared error.
/// pred/target are [N, G, D]; `selected` holds N*G flags. Throws when no row
/// is selected.
Tensor masked_rows_mse(const Tensor& pred, const Tensor& target,
                       std::span<const uint8_t> selected);

}  // namespace mvm
