#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mvm/tensor.hpp"

namespace mvm {

struct Param {
  std::string name;
  Tensor value;
  bool decay = true;  // false for biases, norm affine and mask tokens
};

/// Ordered, named parameter table. Order is registration order and is what
/// checkpoints and optimizer state follow.
class ParamSet {
 public:
  void add(std::string name, Tensor value, bool decay);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  size_t size() const { return params_.size(); }
  const Param& operator[](size_t i) const { return params_[i]; }
  Param& operator[](size_t i) { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  int64_t element_count() const;
  void zero_grad();

  /// Deep copy; `requires_grad` on every copied tensor is set to `trainable`.
  ParamSet clone(bool trainable) const;

  /// Same names, shapes and order.
  bool congruent(const ParamSet& other) const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace mvm
