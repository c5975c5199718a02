#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvm {

using Shape = std::vector<int64_t>;

std::string to_string(const Shape& shape);
int64_t numel_of(const Shape& shape);

/// Raised for any shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Global arithmetic precision for matrix-multiply kernels.
///
/// Storage is always 64-bit. In `f32` mode the GEMM inner kernels run in
/// single precision and their results are widened back, which is where
/// nearly all of the training compute goes. Gradient checks require `f64`.
enum class Precision { f64, f32 };

void set_precision(Precision p);
Precision precision();

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches it
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// One recorded operation. `backward` receives the gradient of the op's
/// output and one accumulation buffer per input (nullptr where the input does
/// not require a gradient). Buffers arrive zero-filled at input size.
struct Node {
  std::vector<Tensor> inputs;
  std::function<void(std::span<const double> grad_out,
                     std::span<std::vector<double>* const> grad_in)>
      backward;
};

}  // namespace detail

/// Dense row-major n-dimensional array of doubles with reverse-mode autodiff.
///
/// Copies share storage (handle semantics, like framework tensors). Use
/// `clone()` for a deep copy and `detach()` to cut the graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t size(int64_t axis) const;
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable tensor that requires a
  /// gradient. `this` must be a scalar. Repeated calls add.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) {
    return Tensor(std::move(impl));
  }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Builds an op output. Records a graph node when gradient mode is on and
/// any input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   decltype(detail::Node::backward) backward);

bool grad_mode_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// C = op(A) * op(B) (+ C when accumulate). Row-major operands:
/// op(A) is m x k, op(B) is k x n. Honors the global precision mode.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          const double* a, const double* b, double* c, bool accumulate);

}  // namespace mvm
