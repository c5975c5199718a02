#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mvm/ops.hpp"
#include "mvm/rng.hpp"
#include "mvm/tensor.hpp"

namespace mvm::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// sum_i w_i * x_i as a graph op, so scalar losses touch every element of x.
inline Tensor weighted_sum(const Tensor& x, const Tensor& weights) {
  const auto& w = weights.values();
  const auto& v = x.values();
  double s = 0.0;
  for (size_t i = 0; i < v.size(); ++i) s += w[i] * v[i];
  return make_result({}, {s}, {x},
                     [w](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                       if (!gi[0]) return;
                       for (size_t i = 0; i < w.size(); ++i) (*gi[0])[i] += g[0] * w[i];
                     });
}

/// Largest relative error between backprop gradients of `loss` and central
/// differences with step `h`, over every element of every leaf. Errors are
/// relative to max(|analytic|, |numeric|, floor).
inline double max_grad_error(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                             double h = 1e-5, double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto data = leaf.data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<uint64_t>(a[i]) != std::bit_cast<uint64_t>(b[i])) return false;
  return true;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return bitwise_equal(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

/// Fresh empty directory under the system temp dir; removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("mvm_test_" + tag)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace mvm::test
