#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ssl2/core/errors.hpp"
#include "ssl2/core/rng.hpp"
#include "ssl2/volume/volume.hpp"

namespace ssl2 {

enum class CutoutFill { Noise, Swap };

struct CutoutRegion {
  std::array<index_t, 3> origin{0, 0, 0};
  std::array<index_t, 3> extent{0, 0, 0};
  CutoutFill fill = CutoutFill::Noise;
  std::array<index_t, 3> swap_source{0, 0, 0};  // valid iff fill == Swap

  index_t volume() const { return extent[0] * extent[1] * extent[2]; }
};

// Full provenance of one augmented view; enough to replay the corruption
// bit-exactly from the clean block. Applied order is fixed:
// rotate -> cutout/swap -> histogram shift.
struct AugmentationRecord {
  int rotation_class = 0;  // k * 90 degrees about axis 2
  std::vector<CutoutRegion> cutouts;
  std::uint64_t noise_seed = 0;  // sub-seed for NOISE fills
  std::array<std::vector<std::pair<double, double>>, 2> histogram_points;  // per channel
};

// Cutout parameters: per-axis edge fraction in [0.05, 0.25] of the block
// edge, total carved volume strictly under 30% of the block.
inline index_t cutout_edge_min(index_t size) {
  return static_cast<index_t>(std::ceil(0.05 * static_cast<double>(size)));
}
inline index_t cutout_edge_max(index_t size) {
  return static_cast<index_t>(std::floor(0.25 * static_cast<double>(size)));
}
inline double cutout_volume_cap(index_t size) { return 0.30 * static_cast<double>(size * size * size); }

// ---------------------------------------------------------------------------
// Rotation: class r rotates by r*90 degrees in the (axis0, axis1) plane.
// Source voxel (x, y, z) lands at (y, S-1-x, z) under class 1.
// ---------------------------------------------------------------------------

inline std::array<index_t, 3> rotate_index(const std::array<index_t, 3>& p, int cls, index_t size) {
  const index_t x = p[0], y = p[1], z = p[2], s = size - 1;
  switch (cls & 3) {
    case 1: return {y, s - x, z};
    case 2: return {s - x, s - y, z};
    case 3: return {s - y, x, z};
    default: return {x, y, z};
  }
}

template <typename T>
void rotate_block(const T* src, T* dst, int cls, index_t size) {
  for (index_t x = 0; x < size; ++x)
    for (index_t y = 0; y < size; ++y)
      for (index_t z = 0; z < size; ++z) {
        const auto q = rotate_index({x, y, z}, cls, size);
        dst[(q[0] * size + q[1]) * size + q[2]] = src[(x * size + y) * size + z];
      }
}

template <typename Scalar>
SubVolume<Scalar> rotate_subvolume(const SubVolume<Scalar>& sv, int cls) {
  SubVolume<Scalar> out = sv;
  const index_t s = sv.extent, vox = s * s * s;
  for (int c = 0; c < 2; ++c)
    rotate_block(sv.data.data() + c * vox, out.data.data() + c * vox, cls, s);
  if (sv.has_mask()) rotate_block(sv.mask.data(), out.mask.data(), cls, s);
  // axis 2 is the rotation axis, so slice indicators are unchanged
  return out;
}

template <typename Scalar>
std::pair<SubVolume<Scalar>, int> random_rotate(const SubVolume<Scalar>& sv, Rng& rng) {
  const int cls = static_cast<int>(rng.uniform_int(0, 3));
  return {rotate_subvolume(sv, cls), cls};
}

// ---------------------------------------------------------------------------
// Cutout / patch swap.
// ---------------------------------------------------------------------------

// Draws regions until adding the next one would reach the 30% volume cap.
// Geometry only; consumes nothing from the noise stream.
inline std::vector<CutoutRegion> draw_cutout_regions(Rng& rng, index_t size) {
  const index_t emin = cutout_edge_min(size);
  const index_t emax = cutout_edge_max(size);
  const double cap = cutout_volume_cap(size);
  std::vector<CutoutRegion> regions;
  index_t total = 0;
  for (;;) {
    CutoutRegion r;
    for (int a = 0; a < 3; ++a) r.extent[a] = rng.uniform_int(emin, emax);
    if (static_cast<double>(total + r.volume()) >= cap) break;
    for (int a = 0; a < 3; ++a) r.origin[a] = rng.uniform_int(0, size - r.extent[a]);
    r.fill = rng.bernoulli(0.5) ? CutoutFill::Swap : CutoutFill::Noise;
    if (r.fill == CutoutFill::Swap)
      for (int a = 0; a < 3; ++a) r.swap_source[a] = rng.uniform_int(0, size - r.extent[a]);
    total += r.volume();
    regions.push_back(r);
  }
  return regions;
}

// Applies regions in order. NOISE fills both channels with uniform [0,1]
// draws from `noise_rng`; SWAP copies from the pre-cutout snapshot.
template <typename Scalar>
void apply_cutouts(Tensor<Scalar>& data, const Tensor<Scalar>& clean,
                   const std::vector<CutoutRegion>& regions, Rng noise_rng) {
  const index_t s = data.dim(1), vox = s * s * s;
  for (const auto& r : regions) {
    for (int c = 0; c < 2; ++c) {
      Scalar* d = data.data() + c * vox;
      const Scalar* cl = clean.data() + c * vox;
      for (index_t x = 0; x < r.extent[0]; ++x)
        for (index_t y = 0; y < r.extent[1]; ++y)
          for (index_t z = 0; z < r.extent[2]; ++z) {
            const index_t di = ((r.origin[0] + x) * s + r.origin[1] + y) * s + r.origin[2] + z;
            if (r.fill == CutoutFill::Noise) {
              d[di] = static_cast<Scalar>(noise_rng.uniform());
            } else {
              const index_t si = ((r.swap_source[0] + x) * s + r.swap_source[1] + y) * s +
                                 r.swap_source[2] + z;
              d[di] = cl[si];
            }
          }
    }
  }
}

// Returns (corrupted, regions, noise_seed, clean_copy). clean_copy is the
// pre-cutout data, the inpainting target.
template <typename Scalar>
std::tuple<SubVolume<Scalar>, std::vector<CutoutRegion>, std::uint64_t, Tensor<Scalar>>
random_cutout_swap(const SubVolume<Scalar>& sv, Rng& rng) {
  const std::uint64_t noise_seed = rng.next_u64();
  std::vector<CutoutRegion> regions = draw_cutout_regions(rng, sv.extent);
  SubVolume<Scalar> out = sv;
  Tensor<Scalar> clean = sv.data;
  apply_cutouts(out.data, clean, regions, Rng(noise_seed));
  return {std::move(out), std::move(regions), noise_seed, std::move(clean)};
}

// ---------------------------------------------------------------------------
// Histogram shift: monotone piecewise-linear remap through sorted random
// interior control points with pinned endpoints (0,0) and (1,1).
// ---------------------------------------------------------------------------

inline double piecewise_linear(double x, const std::vector<std::pair<double, double>>& interior) {
  double x0 = 0.0, y0 = 0.0;
  for (const auto& [xs, ys] : interior) {
    if (x <= xs) {
      if (xs <= x0) return ys;
      return y0 + (x - x0) * (ys - y0) / (xs - x0);
    }
    x0 = xs;
    y0 = ys;
  }
  if (1.0 <= x0) return 1.0;
  return y0 + (x - x0) * (1.0 - y0) / (1.0 - x0);
}

inline std::vector<std::pair<double, double>> draw_histogram_points(Rng& rng) {
  const int n = rng.bernoulli(0.5) ? 1 : 3;
  std::vector<double> src(n), dst(n);
  for (auto& v : src) v = rng.uniform();
  for (auto& v : dst) v = rng.uniform();
  std::sort(src.begin(), src.end());
  std::sort(dst.begin(), dst.end());
  std::vector<std::pair<double, double>> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = {src[i], dst[i]};
  return pts;
}

template <typename Scalar>
void apply_histogram_shift(Tensor<Scalar>& data,
                           const std::array<std::vector<std::pair<double, double>>, 2>& points) {
  const index_t vox = data.size() / 2;
  for (int c = 0; c < 2; ++c) {
    if (points[c].empty()) continue;
    Scalar* d = data.data() + c * vox;
    for (index_t i = 0; i < vox; ++i)
      d[i] = static_cast<Scalar>(piecewise_linear(static_cast<double>(d[i]), points[c]));
  }
}

// Applied independently per channel; control points are returned for replay.
template <typename Scalar>
std::pair<SubVolume<Scalar>, std::array<std::vector<std::pair<double, double>>, 2>>
random_histogram_shift(const SubVolume<Scalar>& sv, Rng& rng) {
  std::array<std::vector<std::pair<double, double>>, 2> pts;
  for (int c = 0; c < 2; ++c) pts[c] = draw_histogram_points(rng);
  SubVolume<Scalar> out = sv;
  apply_histogram_shift(out.data, pts);
  return {std::move(out), std::move(pts)};
}

// ---------------------------------------------------------------------------
// Full chain and replay.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AugmentedView {
  SubVolume<Scalar> view;          // corrupted network input
  AugmentationRecord record;
  Tensor<Scalar> inpaint_target;   // rotated clean data (pre-cutout, pre-shift)
};

template <typename Scalar>
AugmentedView<Scalar> augment_view(const SubVolume<Scalar>& source, Rng& rng) {
  AugmentedView<Scalar> out;
  auto [rotated, cls] = random_rotate(source, rng);
  out.record.rotation_class = cls;
  out.inpaint_target = rotated.data;
  auto [cut, regions, noise_seed, clean] = random_cutout_swap(rotated, rng);
  out.record.cutouts = std::move(regions);
  out.record.noise_seed = noise_seed;
  auto [shifted, pts] = random_histogram_shift(cut, rng);
  out.record.histogram_points = std::move(pts);
  out.view = std::move(shifted);
  return out;
}

// Replays a record against the clean source block; reproduces the corrupted
// view bit-exactly.
template <typename Scalar>
SubVolume<Scalar> apply_record(const AugmentationRecord& rec, const SubVolume<Scalar>& source) {
  SubVolume<Scalar> v = rotate_subvolume(source, rec.rotation_class);
  const Tensor<Scalar> clean = v.data;
  apply_cutouts(v.data, clean, rec.cutouts, Rng(rec.noise_seed));
  apply_histogram_shift(v.data, rec.histogram_points);
  return v;
}

// ---------------------------------------------------------------------------
// 2N-view contrastive minibatch: two independent augmentations per subject.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ContrastiveBatch {
  std::vector<SubVolume<Scalar>> views;      // 2N, subject-major: views 2i, 2i+1
  std::vector<AugmentationRecord> records;   // parallel to views
  std::vector<Tensor<Scalar>> inpaint_targets;
  std::vector<int> subject_of;               // view -> subject index
  std::vector<int> view_of;                  // view -> 1 or 2

  int n_subjects() const { return static_cast<int>(views.size()) / 2; }
};

template <typename Scalar>
ContrastiveBatch<Scalar> build_contrastive_batch(const std::vector<SubVolume<Scalar>>& sources,
                                                 Rng& rng) {
  const int n = static_cast<int>(sources.size());
  if (n < 2) throw BatchTooSmall("build_contrastive_batch: need N >= 2 subjects");
  ContrastiveBatch<Scalar> batch;
  for (int i = 0; i < n; ++i) {
    for (int v = 0; v < 2; ++v) {
      AugmentedView<Scalar> av = augment_view(sources[static_cast<std::size_t>(i)], rng);
      batch.views.push_back(std::move(av.view));
      batch.records.push_back(std::move(av.record));
      batch.inpaint_targets.push_back(std::move(av.inpaint_target));
      batch.subject_of.push_back(i);
      batch.view_of.push_back(v + 1);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// JSON (de)serialization of records, for debugging and replay.
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const CutoutRegion& r) {
  j = {{"origin", r.origin},
       {"extent", r.extent},
       {"fill", r.fill == CutoutFill::Noise ? "noise" : "swap"}};
  if (r.fill == CutoutFill::Swap) j["swap_source"] = r.swap_source;
}

inline void from_json(const nlohmann::json& j, CutoutRegion& r) {
  j.at("origin").get_to(r.origin);
  j.at("extent").get_to(r.extent);
  r.fill = j.at("fill").get<std::string>() == "swap" ? CutoutFill::Swap : CutoutFill::Noise;
  if (r.fill == CutoutFill::Swap) j.at("swap_source").get_to(r.swap_source);
}

inline void to_json(nlohmann::json& j, const AugmentationRecord& rec) {
  j = {{"rotation_class", rec.rotation_class},
       {"cutouts", rec.cutouts},
       {"noise_seed", rec.noise_seed},
       {"histogram_points",
        {rec.histogram_points[0], rec.histogram_points[1]}}};
}

inline void from_json(const nlohmann::json& j, AugmentationRecord& rec) {
  j.at("rotation_class").get_to(rec.rotation_class);
  j.at("cutouts").get_to(rec.cutouts);
  j.at("noise_seed").get_to(rec.noise_seed);
  j.at("histogram_points")[0].get_to(rec.histogram_points[0]);
  j.at("histogram_points")[1].get_to(rec.histogram_points[1]);
}

}  // namespace ssl2
