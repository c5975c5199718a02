#include "mvm/sparse.hpp"

#include <stdexcept>

namespace mvm {

namespace {

void check_mask_matches(const char* op, const Tensor& dense, const SiteMask& mask) {
  if (dense.dim() != 4 || dense.size(0) != mask.batch() || dense.size(2) != mask.height() ||
      dense.size(3) != mask.width()) {
    throw DimensionError(std::string(op) + ": activation " + to_string(dense.shape()) +
                         " does not match mask " + std::to_string(mask.batch()) + "x" +
                         std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
}

Tensor zeroed_input(const char* op, const SparseActivation& input) {
  check_mask_matches(op, input.dense, input.mask);
  return select_sites(input.dense, input.mask.visible());
}

}  // namespace

SparseActivation make_sparse(const Tensor& dense, const SiteMask& mask) {
  check_mask_matches("make_sparse", dense, mask);
  return {select_sites(dense, mask.visible()), mask};
}

SparseActivation sparse_conv2d(const SparseActivation& input, const Tensor& weight,
                               const Tensor& bias, int stride, int padding, int groups) {
  Tensor x = zeroed_input("sparse_conv2d", input);
  SiteMask out_mask = stride == 1 ? input.mask : input.mask.downsample(stride);
  Tensor y = conv2d(x, weight, bias, stride, padding, groups);
  if (y.size(2) != out_mask.height() || y.size(3) != out_mask.width()) {
    throw std::invalid_argument(
        "sparse_conv2d: output " + std::to_string(y.size(2)) + "x" + std::to_string(y.size(3)) +
        " has no mask view (expected " + std::to_string(out_mask.height()) + "x" +
        std::to_string(out_mask.width()) + "); use same-padding or a non-overlapping stride");
  }
  return make_sparse(y, out_mask);
}

SparseActivation sparse_layer_norm(const SparseActivation& input, const Tensor& gamma,
                                   const Tensor& beta, double eps) {
  Tensor x = zeroed_input("sparse_layer_norm", input);
  return make_sparse(layer_norm_channels(x, gamma, beta, eps), input.mask);
}

SparseActivation sparse_grn(const SparseActivation& input, const Tensor& gamma, const Tensor& beta) {
  Tensor x = zeroed_input("sparse_grn", input);
  return make_sparse(grn(x, gamma, beta, input.mask.visible()), input.mask);
}

SparseActivation downsample_conv(const SparseActivation& input, const Tensor& weight,
                                 const Tensor& bias, int factor) {
  if (weight.dim() != 4 || weight.size(2) != factor || weight.size(3) != factor) {
    throw std::invalid_argument("downsample_conv: kernel " + to_string(weight.shape()) +
                                " overlaps; kernel must equal the factor " +
                                std::to_string(factor) + " so masked and visible blocks never mix");
  }
  return sparse_conv2d(input, weight, bias, factor, 0, 1);
}

SparseActivation sparse_gelu(const SparseActivation& input) {
  Tensor x = zeroed_input("sparse_gelu", input);
  return make_sparse(gelu(x), input.mask);
}

SparseActivation sparse_add(const SparseActivation& a, const SparseActivation& b) {
  if (!(a.mask == b.mask)) throw std::invalid_argument("sparse_add: operand masks differ");
  check_mask_matches("sparse_add", a.dense, a.mask);
  return make_sparse(add(a.dense, b.dense), a.mask);
}

}  // namespace mvm
