#include "mvm/params.hpp"

#include <stdexcept>

namespace mvm {

void ParamSet::add(std::string name, Tensor value, bool decay) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), decay});
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second].value;
}

int64_t ParamSet::element_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

ParamSet ParamSet::clone(bool trainable) const {
  ParamSet out;
  for (const auto& p : params_) {
    Tensor copy = p.value.detach();
    copy.set_requires_grad(trainable);
    out.add(p.name, std::move(copy), p.decay);
  }
  return out;
}

bool ParamSet::congruent(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (size_t i = 0; i < size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        params_[i].value.shape() != other.params_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

}  // namespace mvm
