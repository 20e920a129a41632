#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ssl2/core/rng.hpp"
#include "ssl2/volume/volume.hpp"

namespace ssl2 {

// Synthetic test corpus: smooth value-noise brain textures inside an
// ellipsoidal "brain", plus ellipsoidal lesions that are hyperintense on
// FLAIR and isointense on T1w. Intensity bands are kept disjoint so tests can
// recover the lesion set from FLAIR alone.
struct PhantomSpec {
  std::array<index_t, 3> extent{48, 48, 48};
  std::array<int, 2> n_lesions{3, 6};       // inclusive range
  std::array<double, 2> lesion_radius{2.0, 4.0};  // voxel semi-axis range
  double background_texture = 8.0;          // value-noise lattice cell size
  std::uint64_t seed = 0;

  void validate() const {
    if (extent[0] < 8 || extent[1] < 8 || extent[2] < 8) throw ConfigError("phantom extent too small");
    if (n_lesions[0] < 0 || n_lesions[1] < n_lesions[0]) throw ConfigError("phantom lesion count range invalid");
    if (lesion_radius[0] <= 0 || lesion_radius[1] < lesion_radius[0])
      throw ConfigError("phantom lesion radius range invalid");
    if (background_texture < 1.0) throw ConfigError("phantom texture cell must be >= 1");
  }
};

namespace phantom_detail {

// Trilinearly interpolated lattice noise ("value noise"): smooth, cheap, and
// fully determined by the rng stream.
template <typename Scalar>
class ValueNoise {
 public:
  ValueNoise(const std::array<index_t, 3>& extent, double cell, Rng& rng) : cell_(cell) {
    for (int a = 0; a < 3; ++a) n_[a] = static_cast<index_t>(std::floor(extent[a] / cell)) + 2;
    lattice_.resize(static_cast<std::size_t>(n_[0] * n_[1] * n_[2]));
    for (auto& v : lattice_) v = static_cast<Scalar>(rng.uniform());
  }

  Scalar operator()(index_t x, index_t y, index_t z) const {
    const double fx = x / cell_, fy = y / cell_, fz = z / cell_;
    const auto ix = static_cast<index_t>(fx), iy = static_cast<index_t>(fy), iz = static_cast<index_t>(fz);
    const double tx = fx - ix, ty = fy - iy, tz = fz - iz;
    auto at = [&](index_t a, index_t b, index_t c) {
      return static_cast<double>(lattice_[static_cast<std::size_t>((a * n_[1] + b) * n_[2] + c)]);
    };
    double v = 0.0;
    for (int dx = 0; dx < 2; ++dx)
      for (int dy = 0; dy < 2; ++dy)
        for (int dz = 0; dz < 2; ++dz) {
          const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
          v += w * at(ix + dx, iy + dy, iz + dz);
        }
    return static_cast<Scalar>(v);
  }

 private:
  double cell_;
  std::array<index_t, 3> n_{};
  std::vector<Scalar> lattice_;
};

struct Lesion {
  std::array<double, 3> center;
  std::array<double, 3> radius;
};

}  // namespace phantom_detail

// Intensity bands (normalized units). Background FLAIR stays below
// kLesionFlairMin so the lesion set is recoverable by thresholding.
inline constexpr double kBrainT1Lo = 0.35, kBrainT1Hi = 0.75;
inline constexpr double kBrainFlairLo = 0.20, kBrainFlairHi = 0.60;
inline constexpr double kLesionFlairMin = 0.78, kLesionFlairMax = 0.98;

template <typename Scalar>
Sample<Scalar> generate_phantom(const PhantomSpec& spec) {
  using phantom_detail::Lesion;
  spec.validate();
  Rng rng = Rng::root(spec.seed).fork("phantom");

  const auto& ext = spec.extent;
  const std::array<double, 3> center{(ext[0] - 1) / 2.0, (ext[1] - 1) / 2.0, (ext[2] - 1) / 2.0};
  const std::array<double, 3> brain_r{0.42 * ext[0], 0.42 * ext[1], 0.42 * ext[2]};

  auto brain_dist = [&](double x, double y, double z) {
    const double dx = (x - center[0]) / brain_r[0];
    const double dy = (y - center[1]) / brain_r[1];
    const double dz = (z - center[2]) / brain_r[2];
    return dx * dx + dy * dy + dz * dz;
  };

  phantom_detail::ValueNoise<Scalar> t1_tex(ext, spec.background_texture, rng);
  phantom_detail::ValueNoise<Scalar> flair_tex(ext, spec.background_texture, rng);

  // Lesion placement: ellipsoids fully inside the brain, pairwise separated by
  // at least 2 voxels so connected components equal the lesion count.
  const int want = static_cast<int>(rng.uniform_int(spec.n_lesions[0], spec.n_lesions[1]));
  std::vector<Lesion> lesions;
  const double rmax = spec.lesion_radius[1];
  int tries = 0;
  while (static_cast<int>(lesions.size()) < want && tries < 20000) {
    ++tries;
    Lesion l;
    for (int a = 0; a < 3; ++a) l.radius[a] = rng.uniform(spec.lesion_radius[0], spec.lesion_radius[1]);
    for (int a = 0; a < 3; ++a) {
      const double lo = center[a] - brain_r[a] + rmax + 2.0;
      const double hi = center[a] + brain_r[a] - rmax - 2.0;
      l.center[a] = rng.uniform(lo, hi);
    }
    // inside the brain with margin
    const double margin = rmax + 1.5;
    const double shrink = 1.0 - margin / std::min({brain_r[0], brain_r[1], brain_r[2]});
    if (brain_dist(l.center[0], l.center[1], l.center[2]) > shrink * shrink) continue;
    bool clash = false;
    for (const auto& o : lesions) {
      const double dx = l.center[0] - o.center[0];
      const double dy = l.center[1] - o.center[1];
      const double dz = l.center[2] - o.center[2];
      const double need = 2.0 * rmax + 3.0;
      if (dx * dx + dy * dy + dz * dz < need * need) clash = true;
    }
    if (!clash) lesions.push_back(l);
  }

  Sample<Scalar> s;
  s.subject_id = "phantom_" + std::to_string(spec.seed);
  s.labeled = true;
  const std::array<double, 3> sp{0.9, 0.9, 0.9};
  s.t1 = Volume<Scalar>(ext, Modality::T1w, sp);
  s.flair = Volume<Scalar>(ext, Modality::FLAIR, sp);
  s.lesion_mask = Volume<Scalar>(ext, Modality::Mask, sp);

  phantom_detail::ValueNoise<Scalar> lesion_tex(ext, 2.0, rng);

  for (index_t x = 0; x < ext[0]; ++x)
    for (index_t y = 0; y < ext[1]; ++y)
      for (index_t z = 0; z < ext[2]; ++z) {
        if (brain_dist(x, y, z) > 1.0) continue;  // outside brain stays 0
        const double t1v = kBrainT1Lo + (kBrainT1Hi - kBrainT1Lo) * t1_tex(x, y, z);
        double flv = kBrainFlairLo + (kBrainFlairHi - kBrainFlairLo) * flair_tex(x, y, z);
        bool in_lesion = false;
        for (const auto& l : lesions) {
          const double dx = (x - l.center[0]) / l.radius[0];
          const double dy = (y - l.center[1]) / l.radius[1];
          const double dz = (z - l.center[2]) / l.radius[2];
          if (dx * dx + dy * dy + dz * dz <= 1.0) {
            in_lesion = true;
            break;
          }
        }
        if (in_lesion) {
          flv = kLesionFlairMin + (kLesionFlairMax - kLesionFlairMin) * lesion_tex(x, y, z);
          s.lesion_mask->at(x, y, z) = Scalar(1);
        }
        s.t1.at(x, y, z) = static_cast<Scalar>(t1v);
        s.flair.at(x, y, z) = static_cast<Scalar>(flv);
      }

  return s;
}

}  // namespace ssl2
