#include "tdce/pipeline/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "tdce/common/error.hpp"
#include "tdce/common/parallel.hpp"
#include "tdce/common/random.hpp"
#include "tdce/imaging/png_io.hpp"

namespace tdce::pipeline {

namespace {

using Field = std::vector<double>;

Field gaussian_blur(const Field& in, int n, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  Field tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int i = -r; i <= r; ++i) tmp[y * n + x] += k[i + r] * in[y * n + std::clamp(x + i, 0, n - 1)];
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int i = -r; i <= r; ++i) out[y * n + x] += k[i + r] * tmp[std::clamp(y + i, 0, n - 1) * n + x];
  return out;
}

double density_clutter(Density d) {
  switch (d) {
    case Density::A:
      return 0.03;
    case Density::B:
      return 0.05;
    case Density::C:
      return 0.08;
    case Density::D:
      return 0.11;
    case Density::NR:
      break;
  }
  return 0.05;
}

struct Lesion {
  bool present = false;
  bool textured = false;
  double cx = 0, cy = 0, amplitude = 0;
};

// Breast in local coordinates, chest wall at x = 0. The half-ellipse touches
// every row and column of the n x n box.
bool in_breast(int x, int y, int n) {
  const double u = (x + 0.5) / n, v = (y + 0.5 - n / 2.0) / (n / 2.0);
  return u * u + v * v <= 1.02;
}

imaging::RawImage render(const SyntheticConfig& c, Laterality lat, View view, Density density, const Lesion& lesion,
                         Rng& rng) {
  const int n = c.size;
  std::normal_distribution<double> gauss(0.0, 1.0);
  Field clutter(static_cast<std::size_t>(n) * n);
  for (auto& v : clutter) v = gauss(rng);
  clutter = gaussian_blur(clutter, n, 2.0);
  double sd = 0;
  for (double v : clutter) sd += v * v;
  sd = std::sqrt(sd / clutter.size());
  const double amp = density_clutter(density) / std::max(sd, 1e-12);

  imaging::RawImage img;
  img.width = img.height = n + 2 * c.margin;
  img.bit_depth = 16;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  const double r = c.lesion_radius;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (!in_breast(x, y, n)) continue;
      const double u = (x + 0.5) / n, v = (y + 0.5 - n / 2.0) / (n / 2.0);
      double t = 0.30 + 0.12 * (1.0 - std::min(1.0, u * u + v * v)) + amp * clutter[y * n + x];
      if (view == View::MLO && x + y * 0.6 < n * 0.35) t += 0.15;  // pectoral muscle
      if (lesion.present) {
        const double d2 = ((x - lesion.cx) * (x - lesion.cx) + (y - lesion.cy) * (y - lesion.cy)) / (r * r);
        if (d2 < 1.0) {
          t += lesion.amplitude * (1.0 - d2);
          if (lesion.textured) t += c.texture * (((x + y) & 1) ? 1.0 : -1.0);
        }
      }
      t += c.noise * gauss(rng);
      t = std::clamp(t, 0.05, 1.0);
      const int gx = (lat == Laterality::R ? x : n - 1 - x) + c.margin;
      img.pixels[static_cast<std::size_t>(y + c.margin) * img.width + gx] =
          static_cast<std::uint16_t>(std::lround(t * 65535.0));
    }
  }
  return img;
}

Lesion place_lesion(const SyntheticConfig& c, bool present, bool textured, Rng& rng) {
  Lesion l;
  if (!present) return l;
  l.present = true;
  l.textured = textured;
  std::uniform_real_distribution<double> amp(0.05, 0.12);
  std::uniform_real_distribution<double> pos(c.lesion_radius, c.size - c.lesion_radius - 1);
  l.amplitude = amp(rng);
  // Rejection-sample a centre well inside the breast outline.
  for (int tries = 0; tries < 1000; ++tries) {
    l.cx = pos(rng);
    l.cy = pos(rng);
    const double u = (l.cx + 0.5 + c.lesion_radius) / c.size, v = (l.cy + 0.5 - c.size / 2.0) / (c.size / 2.0);
    if (u * u + v * v < 0.8) return l;
  }
  l.cx = c.size / 3.0;
  l.cy = c.size / 2.0;
  return l;
}

Density draw_density(Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0, 1)(rng);
  if (u < 0.1) return Density::A;
  if (u < 0.5) return Density::B;
  if (u < 0.9) return Density::C;
  return Density::D;
}

}  // namespace

std::vector<SyntheticCase> synthesize(const SyntheticConfig& c, unsigned threads) {
  if (c.patients < 1) throw ValidationError("synthetic cohort needs >= 1 patient");
  if (c.size < 8) throw ValidationError("synthetic image size must be >= 8");
  if (c.margin < 1) throw ValidationError("synthetic margin must be >= 1");
  if (c.prevalence < 0 || c.prevalence > 1) throw ValidationError("prevalence must be in [0,1]");

  std::vector<std::vector<SyntheticCase>> per_patient(static_cast<std::size_t>(c.patients));
  parallel_for(per_patient.size(), threads, [&](std::size_t p) {
    auto rng = make_rng(c.seed, {0x5e7, p});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    char pid[32];
    std::snprintf(pid, sizeof pid, "P%05zu", p + 1);
    const Density density = draw_density(rng);
    for (Laterality lat : {Laterality::L, Laterality::R}) {
      const bool incomplete = unif(rng) < c.birads0_rate;
      const bool suspicious = !incomplete && unif(rng) < c.prevalence;
      CaseRecord base;
      base.patient_id = pid;
      base.study_id = std::string("S") + (pid + 1);
      base.laterality = lat;
      base.density = density;
      if (incomplete) {
        base.birads = {0, std::nullopt};
      } else if (suspicious) {
        if (unif(rng) < c.birads6_rate) {
          base.birads = {6, std::nullopt};
        } else {
          const int k = static_cast<int>(unif(rng) * 4);
          base.birads = k < 3 ? Birads{4, static_cast<char>('A' + k)} : Birads{5, std::nullopt};
        }
        const double u = unif(rng);
        const Finding primary = u < 0.45   ? Finding::mass
                                : u < 0.75 ? Finding::calcification
                                : u < 0.9  ? Finding::asymmetry
                                           : Finding::distortion;
        base.findings.push_back(primary);
        if (unif(rng) < 0.2) base.findings.push_back(static_cast<Finding>(static_cast<int>(unif(rng) * 4)));
      } else {
        const double u = unif(rng);
        base.birads = {u < 0.5 ? 1 : (u < 0.85 ? 2 : 3), std::nullopt};
        if (base.birads.category > 1) base.findings.push_back(unif(rng) < 0.5 ? Finding::mass : Finding::calcification);
      }
      std::sort(base.findings.begin(), base.findings.end());
      base.findings.erase(std::unique(base.findings.begin(), base.findings.end()), base.findings.end());
      if (base.findings.empty()) base.findings.push_back(Finding::none);

      const bool blob = suspicious || unif(rng) < c.decoy_rate;
      for (View view : {View::CC, View::MLO}) {
        SyntheticCase sc;
        sc.record = base;
        sc.record.view = view;
        sc.record.image_path =
            std::string("images/") + pid + "_" + to_string(lat) + "_" + to_string(view) + ".png";
        const Lesion lesion = place_lesion(c, blob, suspicious, rng);
        sc.image = render(c, lat, view, density, lesion, rng);
        per_patient[p].push_back(std::move(sc));
      }
    }
  });
  std::vector<SyntheticCase> out;
  for (auto& v : per_patient)
    for (auto& sc : v) out.push_back(std::move(sc));
  return out;
}

Manifest write_synthetic(const std::vector<SyntheticCase>& cases, const std::filesystem::path& out_dir,
                         unsigned threads) {
  std::filesystem::create_directories(out_dir / "images");
  parallel_for(cases.size(), threads,
               [&](std::size_t i) { imaging::write_gray_png(cases[i].image, out_dir / cases[i].record.image_path); });
  Manifest m;
  m.reserve(cases.size());
  for (const auto& sc : cases) m.push_back(sc.record);
  write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

}  // namespace tdce::pipeline
