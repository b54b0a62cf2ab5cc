#pragma once

#include <cstdint>

#include "tdce/pipeline/case_record.hpp"

namespace tdce::pipeline {

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct Split {
  Manifest train;
  Manifest val;
  Manifest test;
};

// Patient-level split. Patient ids are sorted, shuffled under `seed`, and cut
// at round(n*train) and round(n*(train+val)). Record order within each
// partition follows the input manifest.
Split split_patients(const Manifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace tdce::pipeline
