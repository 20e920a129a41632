#pragma once

#include "ssl2/volume/volume.hpp"

namespace ssl2 {

// Dice overlap of two binary masks; 1.0 when both are empty.
template <typename Scalar>
double dice_score(const Volume<Scalar>& pred, const Volume<Scalar>& gt) {
  if (pred.extent != gt.extent) throw ShapeMismatch("dice_score: extents differ");
  index_t inter = 0, na = 0, nb = 0;
  for (index_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.voxels[static_cast<std::size_t>(i)] > Scalar(0.5);
    const bool b = gt.voxels[static_cast<std::size_t>(i)] > Scalar(0.5);
    inter += a && b;
    na += a;
    nb += b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

template <typename Scalar>
Volume<Scalar> threshold_volume(const Volume<Scalar>& prob, double threshold) {
  Volume<Scalar> out = prob;
  out.modality = Modality::Mask;
  for (auto& v : out.voxels) v = v >= static_cast<Scalar>(threshold) ? Scalar(1) : Scalar(0);
  return out;
}

}  // namespace ssl2
