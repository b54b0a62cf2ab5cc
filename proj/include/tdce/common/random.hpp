#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace tdce {

using Rng = std::mt19937_64;

// Deterministic child seed from a master seed and a path of indices, so that
// per-replicate / per-reader streams do not depend on scheduling order.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(master, path));
}

}  // namespace tdce
