#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tdce/imaging/image.hpp"
#include "tdce/pipeline/case_record.hpp"

namespace tdce::pipeline {

// Synthetic screening cohort: each patient has L/R breasts imaged in CC and
// MLO. A suspicious breast carries a lesion with a fine checkerboard texture
// in both views; every lesion-like blob, suspicious or not, has the same
// intensity profile, so only the texture separates the classes.
struct SyntheticConfig {
  int patients = 500;
  int size = 32;            // breast bounding box; equals the network input size
  int margin = 4;           // zero background around the box
  double prevalence = 0.4;  // suspicious breasts
  double birads0_rate = 0.02;
  double birads6_rate = 0.0;   // fraction of suspicious breasts coded 6
  double texture = 0.12;       // checkerboard amplitude (fraction of full scale)
  double decoy_rate = 0.7;     // non-suspicious breasts with a plain blob
  double noise = 0.02;         // white noise sd
  double lesion_radius = 4.0;
  std::uint64_t seed = 0;
};

struct SyntheticCase {
  CaseRecord record;
  imaging::RawImage image;
};

// Deterministic in (config, seed); patient i depends only on (seed, i).
std::vector<SyntheticCase> synthesize(const SyntheticConfig& c, unsigned threads = 1);

// Writes images under out_dir/images and returns the manifest with paths
// relative to out_dir.
Manifest write_synthetic(const std::vector<SyntheticCase>& cases, const std::filesystem::path& out_dir,
                         unsigned threads = 1);

}  // namespace tdce::pipeline
