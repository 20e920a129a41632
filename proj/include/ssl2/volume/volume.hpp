#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ssl2/core/errors.hpp"
#include "ssl2/core/rng.hpp"
#include "ssl2/core/tensor.hpp"

namespace ssl2 {

enum class Modality { T1w, FLAIR, Mask };

// 3D scalar grid, row-major with axis 2 fastest. Axis 2 is the slice axis
// used for sparse labeling.
template <typename Scalar>
struct Volume {
  std::array<index_t, 3> extent{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Modality modality = Modality::T1w;
  std::vector<Scalar> voxels;

  Volume() = default;
  Volume(std::array<index_t, 3> e, Modality m, std::array<double, 3> sp = {1.0, 1.0, 1.0})
      : extent(e), spacing(sp), modality(m), voxels(static_cast<std::size_t>(e[0] * e[1] * e[2]), Scalar(0)) {}

  index_t size() const { return extent[0] * extent[1] * extent[2]; }
  index_t idx(index_t x, index_t y, index_t z) const { return (x * extent[1] + y) * extent[2] + z; }
  Scalar& at(index_t x, index_t y, index_t z) { return voxels[static_cast<std::size_t>(idx(x, y, z))]; }
  Scalar at(index_t x, index_t y, index_t z) const { return voxels[static_cast<std::size_t>(idx(x, y, z))]; }
};

// One subject: co-registered T1w + FLAIR, optional lesion mask, optional
// per-slice label indicator along axis 2.
template <typename Scalar>
struct Sample {
  std::string subject_id;
  Volume<Scalar> t1;
  Volume<Scalar> flair;
  std::optional<Volume<Scalar>> lesion_mask;
  std::optional<std::vector<std::uint8_t>> labeled_slices;
  bool labeled = false;
  // Voxel offset of this (possibly cropped) sample inside its original grid,
  // recorded by crop_to_brain_bbox for round-trip placement.
  std::array<index_t, 3> crop_offset{0, 0, 0};

  const std::array<index_t, 3>& extent() const { return t1.extent; }

  void validate() const {
    if (t1.extent != flair.extent) throw ShapeMismatch("sample " + subject_id + ": t1/flair extents differ");
    if (lesion_mask && lesion_mask->extent != t1.extent)
      throw ShapeMismatch("sample " + subject_id + ": mask extent differs");
    if (labeled && !lesion_mask) throw ConfigError("sample " + subject_id + ": labeled but no mask");
    if (labeled_slices && static_cast<index_t>(labeled_slices->size()) != t1.extent[2])
      throw ShapeMismatch("sample " + subject_id + ": labeled_slices length != axis-2 extent");
  }
};

// Fixed-size training block: 2 channels (0 = T1w, 1 = FLAIR) of size^3 voxels.
template <typename Scalar>
struct SubVolume {
  Tensor<Scalar> data;  // shape {2, S, S, S}
  std::array<index_t, 3> origin{0, 0, 0};
  std::vector<std::uint8_t> mask;           // S^3 labels, empty if unlabeled
  std::vector<std::uint8_t> slice_labeled;  // length S indicator along axis 2, empty if dense
  index_t extent = 0;

  bool has_mask() const { return !mask.empty(); }
  bool has_slice_labels() const { return !slice_labeled.empty(); }
};

struct FoldSpec {
  int fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// ---------------------------------------------------------------------------
// Intensity normalization: clip at the 0.5 / 99.5 intensity percentiles, then
// min-max rescale to [0, 1]. Monotone, and exactly idempotent because the
// percentile indices land inside the clipped point masses on a second pass.
// ---------------------------------------------------------------------------

template <typename Scalar>
std::pair<Scalar, Scalar> robust_intensity_bounds(const std::vector<Scalar>& values) {
  std::vector<Scalar> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<index_t>(sorted.size());
  const auto lo_idx = static_cast<index_t>(std::floor(0.005 * static_cast<double>(n - 1)));
  const auto hi_idx = static_cast<index_t>(std::ceil(0.995 * static_cast<double>(n - 1)));
  Scalar lo = sorted[static_cast<std::size_t>(lo_idx)];
  Scalar hi = sorted[static_cast<std::size_t>(hi_idx)];
  if (!(hi > lo)) {  // degenerate percentile window; fall back to full range
    lo = sorted.front();
    hi = sorted.back();
  }
  return {lo, hi};
}

template <typename Scalar>
Volume<Scalar> normalize_intensity(const Volume<Scalar>& v) {
  if (v.voxels.empty()) throw ConstantVolume("normalize_intensity: empty volume");
  Scalar mn = v.voxels[0], mx = v.voxels[0];
  for (Scalar x : v.voxels) {
    if (!std::isfinite(static_cast<double>(x))) throw ConstantVolume("normalize_intensity: non-finite voxel");
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  if (!(mx > mn)) throw ConstantVolume("normalize_intensity: constant volume, max == min");

  const auto [lo, hi] = robust_intensity_bounds(v.voxels);
  Volume<Scalar> out = v;
  const Scalar range = hi - lo;
  for (Scalar& x : out.voxels) {
    const Scalar c = std::clamp(x, lo, hi);
    x = (c - lo) / range;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Brain bounding-box crop. Support = nonzero T1w voxels.
// ---------------------------------------------------------------------------

template <typename Scalar>
std::pair<std::array<index_t, 3>, std::array<index_t, 3>> nonzero_bbox(const Volume<Scalar>& v) {
  std::array<index_t, 3> lo{v.extent[0], v.extent[1], v.extent[2]};
  std::array<index_t, 3> hi{-1, -1, -1};
  for (index_t x = 0; x < v.extent[0]; ++x)
    for (index_t y = 0; y < v.extent[1]; ++y)
      for (index_t z = 0; z < v.extent[2]; ++z)
        if (v.at(x, y, z) != Scalar(0)) {
          lo[0] = std::min(lo[0], x);
          lo[1] = std::min(lo[1], y);
          lo[2] = std::min(lo[2], z);
          hi[0] = std::max(hi[0], x);
          hi[1] = std::max(hi[1], y);
          hi[2] = std::max(hi[2], z);
        }
  if (hi[0] < 0) throw EmptyBrain("crop_to_brain_bbox: no nonzero voxel in brain support");
  return {lo, hi};
}

template <typename Scalar>
Volume<Scalar> crop_volume(const Volume<Scalar>& v, const std::array<index_t, 3>& lo,
                           const std::array<index_t, 3>& ext) {
  Volume<Scalar> out(ext, v.modality, v.spacing);
  for (index_t x = 0; x < ext[0]; ++x)
    for (index_t y = 0; y < ext[1]; ++y)
      for (index_t z = 0; z < ext[2]; ++z)
        out.at(x, y, z) = v.at(lo[0] + x, lo[1] + y, lo[2] + z);
  return out;
}

// Inverse of crop_volume: place a cropped block back into a zeroed grid of the
// original extent at the recorded offset.
template <typename Scalar>
Volume<Scalar> place_back(const Volume<Scalar>& cropped, const std::array<index_t, 3>& offset,
                          const std::array<index_t, 3>& orig_extent) {
  Volume<Scalar> out(orig_extent, cropped.modality, cropped.spacing);
  for (index_t x = 0; x < cropped.extent[0]; ++x)
    for (index_t y = 0; y < cropped.extent[1]; ++y)
      for (index_t z = 0; z < cropped.extent[2]; ++z)
        out.at(offset[0] + x, offset[1] + y, offset[2] + z) = cropped.at(x, y, z);
  return out;
}

template <typename Scalar>
Sample<Scalar> crop_to_brain_bbox(const Sample<Scalar>& s) {
  s.validate();
  const auto [lo, hi] = nonzero_bbox(s.t1);
  const std::array<index_t, 3> ext{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  Sample<Scalar> out;
  out.subject_id = s.subject_id;
  out.labeled = s.labeled;
  out.t1 = crop_volume(s.t1, lo, ext);
  out.flair = crop_volume(s.flair, lo, ext);
  if (s.lesion_mask) out.lesion_mask = crop_volume(*s.lesion_mask, lo, ext);
  if (s.labeled_slices) {
    out.labeled_slices = std::vector<std::uint8_t>(
        s.labeled_slices->begin() + lo[2], s.labeled_slices->begin() + lo[2] + ext[2]);
  }
  out.crop_offset = {s.crop_offset[0] + lo[0], s.crop_offset[1] + lo[1], s.crop_offset[2] + lo[2]};
  return out;
}

// ---------------------------------------------------------------------------
// Sub-volume sampling.
// ---------------------------------------------------------------------------

template <typename Scalar>
Volume<Scalar> pad_volume_to(const Volume<Scalar>& v, index_t size) {
  std::array<index_t, 3> ext{std::max(v.extent[0], size), std::max(v.extent[1], size),
                             std::max(v.extent[2], size)};
  if (ext == v.extent) return v;
  Volume<Scalar> out(ext, v.modality, v.spacing);
  std::array<index_t, 3> off{(ext[0] - v.extent[0]) / 2, (ext[1] - v.extent[1]) / 2,
                             (ext[2] - v.extent[2]) / 2};
  for (index_t x = 0; x < v.extent[0]; ++x)
    for (index_t y = 0; y < v.extent[1]; ++y)
      for (index_t z = 0; z < v.extent[2]; ++z)
        out.at(off[0] + x, off[1] + y, off[2] + z) = v.at(x, y, z);
  return out;
}

// Zero-pads every axis up to `size`, symmetrically. Labeled-slice indicators
// are padded with zeros (padding is unlabeled).
template <typename Scalar>
Sample<Scalar> pad_sample_to(const Sample<Scalar>& s, index_t size) {
  if (s.extent()[0] >= size && s.extent()[1] >= size && s.extent()[2] >= size) return s;
  Sample<Scalar> out = s;
  out.t1 = pad_volume_to(s.t1, size);
  out.flair = pad_volume_to(s.flair, size);
  if (s.lesion_mask) out.lesion_mask = pad_volume_to(*s.lesion_mask, size);
  if (s.labeled_slices) {
    const index_t ext2 = out.t1.extent[2];
    const index_t off2 = (ext2 - s.t1.extent[2]) / 2;
    std::vector<std::uint8_t> padded(static_cast<std::size_t>(ext2), 0);
    std::copy(s.labeled_slices->begin(), s.labeled_slices->end(), padded.begin() + off2);
    out.labeled_slices = std::move(padded);
  }
  return out;
}

template <typename Scalar>
SubVolume<Scalar> extract_subvolume(const Sample<Scalar>& s, const std::array<index_t, 3>& origin,
                                    index_t size) {
  for (int a = 0; a < 3; ++a)
    if (origin[a] < 0 || origin[a] + size > s.extent()[a])
      throw ShapeMismatch("extract_subvolume: origin out of range");
  SubVolume<Scalar> sv;
  sv.extent = size;
  sv.origin = origin;
  sv.data = Tensor<Scalar>({2, size, size, size});
  Scalar* t1p = sv.data.data();
  Scalar* flp = sv.data.data() + size * size * size;
  for (index_t x = 0; x < size; ++x)
    for (index_t y = 0; y < size; ++y)
      for (index_t z = 0; z < size; ++z) {
        const index_t i = (x * size + y) * size + z;
        t1p[i] = s.t1.at(origin[0] + x, origin[1] + y, origin[2] + z);
        flp[i] = s.flair.at(origin[0] + x, origin[1] + y, origin[2] + z);
      }
  if (s.lesion_mask) {
    sv.mask.resize(static_cast<std::size_t>(size * size * size));
    for (index_t x = 0; x < size; ++x)
      for (index_t y = 0; y < size; ++y)
        for (index_t z = 0; z < size; ++z)
          sv.mask[static_cast<std::size_t>((x * size + y) * size + z)] =
              s.lesion_mask->at(origin[0] + x, origin[1] + y, origin[2] + z) > Scalar(0.5) ? 1 : 0;
  }
  if (s.labeled_slices) {
    sv.slice_labeled.assign(s.labeled_slices->begin() + origin[2],
                            s.labeled_slices->begin() + origin[2] + size);
  }
  return sv;
}

// Randomly extracts n size^3 sub-volumes with uniform origins. Samples smaller
// than `size` on any axis are zero-padded first. With
// require_labeled_slice set and a sparse sample, origins are rejection-sampled
// until the block intersects at least one labeled slice (capped, then accept).
template <typename Scalar>
std::vector<SubVolume<Scalar>> sample_subvolumes(const Sample<Scalar>& s, index_t n, index_t size,
                                                 Rng& rng, bool require_labeled_slice = false,
                                                 int max_tries = 100) {
  const Sample<Scalar> padded = pad_sample_to(s, size);
  const auto& ext = padded.extent();
  std::vector<SubVolume<Scalar>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) {
    std::array<index_t, 3> origin{};
    for (int t = 0; t < max_tries; ++t) {
      for (int a = 0; a < 3; ++a) origin[a] = rng.uniform_int(0, ext[a] - size);
      if (!require_labeled_slice || !padded.labeled_slices) break;
      bool hit = false;
      for (index_t z = origin[2]; z < origin[2] + size && !hit; ++z)
        hit = (*padded.labeled_slices)[static_cast<std::size_t>(z)] != 0;
      if (hit) break;
    }
    out.push_back(extract_subvolume(padded, origin, size));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation folds: shuffle ids with the experiment seed, then take
// contiguous blocks as test sets.
// ---------------------------------------------------------------------------

inline std::vector<FoldSpec> make_folds(const std::vector<std::string>& subject_ids, int k, Rng& rng) {
  const auto n = static_cast<index_t>(subject_ids.size());
  if (k < 1) throw ConfigError("make_folds: k must be >= 1");
  if (n < k) throw TooFewSubjects("make_folds: need at least k subjects");
  std::vector<std::string> shuffled = subject_ids;
  rng.shuffle(shuffled);
  const index_t base = n / k;
  const index_t extra = n % k;  // first `extra` folds get one more test subject
  std::vector<FoldSpec> folds;
  index_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const index_t sz = base + (f < extra ? 1 : 0);
    FoldSpec spec;
    spec.fold_index = f;
    spec.test_ids.assign(shuffled.begin() + pos, shuffled.begin() + pos + sz);
    spec.train_ids.reserve(static_cast<std::size_t>(n - sz));
    for (index_t i = 0; i < n; ++i)
      if (i < pos || i >= pos + sz) spec.train_ids.push_back(shuffled[static_cast<std::size_t>(i)]);
    pos += sz;
    folds.push_back(std::move(spec));
  }
  return folds;
}

}  // namespace ssl2
