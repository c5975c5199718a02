#pragma once

#include "mvm/masking.hpp"
#include "mvm/ops.hpp"

namespace mvm {

/// Dense NCHW storage plus the site mask at the same resolution.
/// Invariant: every channel of every masked site is exactly zero.
struct SparseActivation {
  Tensor dense;
  SiteMask mask;
};

/// Wraps `dense`, zeroing masked sites.
SparseActivation make_sparse(const Tensor& dense, const SiteMask& mask);

// Each op zeroes masked input sites, runs the dense kernel, and re-zeroes the
// masked output sites, so no masked value reaches a visible output and
// biases never appear at masked sites.

SparseActivation sparse_conv2d(const SparseActivation& input, const Tensor& weight,
                               const Tensor& bias, int stride, int padding, int groups = 1);

SparseActivation sparse_layer_norm(const SparseActivation& input, const Tensor& gamma,
                                   const Tensor& beta, double eps = 1e-6);

/// GRN whose response statistics use visible sites only.
SparseActivation sparse_grn(const SparseActivation& input, const Tensor& gamma, const Tensor& beta);

/// Non-overlapping factor x factor patch-merging convolution (stride = kernel).
SparseActivation downsample_conv(const SparseActivation& input, const Tensor& weight,
                                 const Tensor& bias, int factor);

SparseActivation sparse_gelu(const SparseActivation& input);

/// Residual sum; both operands must carry the same mask.
SparseActivation sparse_add(const SparseActivation& a, const SparseActivation& b);

}  // namespace mvm
