#include "mvm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <sstream>
#include <unordered_map>

namespace mvm {

namespace {

thread_local bool g_grad_mode = true;
Precision g_precision = Precision::f64;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_numel(const Shape& shape, size_t n) {
  if (numel_of(shape) != static_cast<int64_t>(n)) {
    throw DimensionError("shape " + to_string(shape) + " does not hold " +
                         std::to_string(n) + " values");
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw DimensionError("negative extent in " + to_string(shape));
    n *= e;
  }
  return n;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<size_t>(numel_of(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_numel(shape, values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

int64_t Tensor::size(int64_t axis) const {
  if (axis < 0) axis += dim();
  if (axis < 0 || axis >= dim()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape()));
  }
  return impl_->shape[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  }
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  if (impl_->grad_fn) {
    throw std::logic_error("requires_grad can only be set on leaf tensors");
  }
  impl_->requires_grad = on;
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = impl_->requires_grad && !impl_->grad_fn;
  return out;
}

Tensor Tensor::reshape(Shape shape) const {
  check_numel(shape, impl_->data.size());
  return make_result(std::move(shape), impl_->data, {*this},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       if (gi[0]) {
                         auto& dst = *gi[0];
                         for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       }
                     });
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   decltype(detail::Node::backward) backward) {
  check_numel(shape, values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (g_grad_mode) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      auto node = std::make_shared<detail::Node>();
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
      impl->grad_fn = std::move(node);
    }
  }
  return Tensor::wrap(std::move(impl));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!impl_->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::TensorImpl*> order;
  std::unordered_map<detail::TensorImpl*, bool> seen;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack{{impl_.get(), 0}};
  seen[impl_.get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      auto* child = fn->inputs[next++].impl();
      if (child->requires_grad && !seen[child]) {
        seen[child] = true;
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<detail::TensorImpl*, std::vector<double>> local;
  local[impl_.get()] = {1.0};
  std::vector<std::vector<double>*> buffers;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->grad_fn) continue;
    auto found = local.find(node);
    if (found == local.end()) continue;
    const auto& fn = *node->grad_fn;
    buffers.assign(fn.inputs.size(), nullptr);
    for (size_t i = 0; i < fn.inputs.size(); ++i) {
      auto* in = fn.inputs[i].impl();
      if (!in->requires_grad) continue;
      auto& buf = local[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      buffers[i] = &buf;
    }
    // `local` may rehash above; look the output gradient up again.
    const auto& grad_out = local.at(node);
    fn.backward(grad_out, buffers);
  }

  for (auto& [node, g] : local) {
    if (!node->requires_grad) continue;
    if (node->grad.empty()) {
      node->grad = std::move(g);
    } else {
      for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
  }
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  Eigen::Map<RowMat> out(c, m, n);
  if (k == 0) {
    if (!accumulate) out.setZero();
    return;
  }
  const int64_t ar = trans_a ? k : m, ac = trans_a ? m : k;
  const int64_t br = trans_b ? n : k, bc = trans_b ? k : n;
  Eigen::Map<const RowMat> am(a, ar, ac);
  Eigen::Map<const RowMat> bm(b, br, bc);

  if (g_precision == Precision::f32) {
    RowMatF af = am.cast<float>();
    RowMatF bf = bm.cast<float>();
    RowMatF cf(m, n);
    if (trans_a && trans_b) cf.noalias() = af.transpose() * bf.transpose();
    else if (trans_a) cf.noalias() = af.transpose() * bf;
    else if (trans_b) cf.noalias() = af * bf.transpose();
    else cf.noalias() = af * bf;
    if (accumulate) out += cf.cast<double>();
    else out = cf.cast<double>();
    return;
  }

  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) out.noalias() += lhs * rhs;
    else out.noalias() = lhs * rhs;
  };
  if (trans_a && trans_b) run(am.transpose(), bm.transpose());
  else if (trans_a) run(am.transpose(), bm);
  else if (trans_b) run(am, bm.transpose());
  else run(am, bm);
}

}  // namespace mvm
