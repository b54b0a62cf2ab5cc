#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tdce/diffcore/tensor.hpp"

namespace tdce::diff {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Named parameters in insertion order. Names are unique.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value, bool trainable);

  std::size_t size() const noexcept { return params_.size(); }
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& at(std::string_view name) const { return params_[index_of(name)]; }
  Parameter& at(std::string_view name) { return params_[index_of(name)]; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Marks every parameter whose name starts with `prefix`.
  void set_trainable_prefix(std::string_view prefix, bool trainable);
  std::vector<bool> trainable_mask() const;
  std::size_t element_count(const std::function<bool(const Parameter&)>& pred = {}) const;

  // SHA-256 over (name, shape, raw little-endian bytes) of the selected parameters.
  std::string hash(const std::function<bool(const Parameter&)>& pred = {}) const;
  std::string hash_prefix(std::string_view prefix) const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// One gradient tensor per parameter, aligned with ParamSet order.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const ParamSet& params);
void accumulate(Gradients& into, const Gradients& from, double scale = 1.0);

}  // namespace tdce::diff
