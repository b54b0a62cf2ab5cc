#include "tdce/diffcore/param_set.hpp"

#include <bit>
#include <cstring>

#include "tdce/common/error.hpp"
#include "tdce/common/hash.hpp"

namespace tdce::diff {

std::size_t ParamSet::add(std::string name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw ValidationError("duplicate parameter name: " + name);
  const std::size_t i = params_.size();
  index_.emplace(name, i);
  params_.push_back({std::move(name), std::move(value), trainable});
  return i;
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + std::string(name));
  return it->second;
}

void ParamSet::set_trainable_prefix(std::string_view prefix, bool trainable) {
  for (auto& p : params_)
    if (p.name.starts_with(prefix)) p.trainable = trainable;
}

std::vector<bool> ParamSet::trainable_mask() const {
  std::vector<bool> m;
  m.reserve(params_.size());
  for (const auto& p : params_) m.push_back(p.trainable);
  return m;
}

std::size_t ParamSet::element_count(const std::function<bool(const Parameter&)>& pred) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (!pred || pred(p)) n += p.value.size();
  return n;
}

std::string ParamSet::hash(const std::function<bool(const Parameter&)>& pred) const {
  static_assert(std::endian::native == std::endian::little, "parameter hashing assumes little-endian hosts");
  std::string buf;
  for (const auto& p : params_) {
    if (pred && !pred(p)) continue;
    buf += p.name;
    buf += '\0';
    buf += to_string(p.value.shape());
    const auto* bytes = reinterpret_cast<const char*>(p.value.ptr());
    buf.append(bytes, p.value.size() * sizeof(double));
  }
  return sha256_hex(buf);
}

std::string ParamSet::hash_prefix(std::string_view prefix) const {
  return hash([&](const Parameter& p) { return p.name.starts_with(prefix); });
}

Gradients zero_gradients(const ParamSet& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.value.shape(), 0.0);
  return g;
}

void accumulate(Gradients& into, const Gradients& from, double scale) {
  if (into.size() != from.size()) throw ValidationError("gradient sets differ in parameter count");
  for (std::size_t i = 0; i < into.size(); ++i) {
    auto& a = into[i].storage();
    const auto& b = from[i].storage();
    if (a.size() != b.size()) throw ValidationError("gradient shape mismatch at parameter " + std::to_string(i));
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * b[k];
  }
}

}  // namespace tdce::diff
