#pragma once

#include <vector>

#include "ssl2/eval/metrics.hpp"
#include "ssl2/losses/losses.hpp"
#include "ssl2/nn/model.hpp"
#include "ssl2/volume/volume.hpp"

namespace ssl2 {

enum class BlendMode { Mean };

struct InferenceConfig {
  index_t window = 96;
  index_t overlap = 24;
  BlendMode blend = BlendMode::Mean;
  double threshold = 0.5;

  void validate() const {
    if (window < 1) throw ConfigError("inference window must be >= 1");
    if (overlap < 0 || overlap >= window) throw ConfigError("inference overlap must be in [0, window)");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
  }
};

// Window origins along one axis: stride window - overlap, final origin clamped
// to the boundary, duplicates removed. Covers every voxel.
inline std::vector<index_t> window_origins(index_t extent, index_t window, index_t overlap) {
  const index_t stride = window - overlap;
  std::vector<index_t> out;
  for (index_t o = 0;; o += stride) {
    if (o + window >= extent) {
      const index_t last = extent - window;
      if (out.empty() || out.back() != last) out.push_back(last);
      break;
    }
    out.push_back(o);
  }
  return out;
}

// Tiles the volume with overlapping windows, runs `predict` on each 2-channel
// block, and mean-blends the per-voxel foreground probabilities. `predict`
// maps a {2,w,w,w} block to {2,w,w,w} per-voxel class probabilities.
// Inputs smaller than the window are zero-padded symmetrically and the output
// is cropped back. The accumulated weight map is exposed for verification.
template <typename Scalar, typename Predictor>
Volume<Scalar> sliding_window_predict(Predictor&& predict, const Sample<Scalar>& sample,
                                      const InferenceConfig& cfg,
                                      Volume<Scalar>* weights_out = nullptr) {
  cfg.validate();
  const Sample<Scalar> padded = pad_sample_to(sample, cfg.window);
  const auto& ext = padded.extent();
  Volume<Scalar> acc(ext, Modality::Mask, padded.t1.spacing);
  Volume<Scalar> wgt(ext, Modality::Mask, padded.t1.spacing);

  const auto ox = window_origins(ext[0], cfg.window, cfg.overlap);
  const auto oy = window_origins(ext[1], cfg.window, cfg.overlap);
  const auto oz = window_origins(ext[2], cfg.window, cfg.overlap);
  const index_t w = cfg.window;

  for (index_t x0 : ox)
    for (index_t y0 : oy)
      for (index_t z0 : oz) {
        const SubVolume<Scalar> block = extract_subvolume(padded, {x0, y0, z0}, w);
        const Tensor<Scalar> probs = predict(block.data);
        if (probs.shape() != std::vector<index_t>{2, w, w, w})
          throw ShapeMismatch("sliding_window_predict: predictor output shape");
        const Scalar* fg = probs.data() + w * w * w;  // channel 1
        for (index_t x = 0; x < w; ++x)
          for (index_t y = 0; y < w; ++y)
            for (index_t z = 0; z < w; ++z) {
              acc.at(x0 + x, y0 + y, z0 + z) += fg[(x * w + y) * w + z];
              wgt.at(x0 + x, y0 + y, z0 + z) += Scalar(1);
            }
      }

  for (index_t i = 0; i < acc.size(); ++i)
    acc.voxels[static_cast<std::size_t>(i)] /= wgt.voxels[static_cast<std::size_t>(i)];

  // crop away any padding
  const std::array<index_t, 3> off{(ext[0] - sample.extent()[0]) / 2,
                                   (ext[1] - sample.extent()[1]) / 2,
                                   (ext[2] - sample.extent()[2]) / 2};
  Volume<Scalar> out = crop_volume(acc, off, sample.extent());
  out.modality = Modality::Mask;
  if (weights_out) *weights_out = crop_volume(wgt, off, sample.extent());
  return out;
}

// Adapter: segmentation model -> per-voxel class probabilities.
template <typename Scalar>
auto model_predictor(SegModel<Scalar>& model) {
  return [&model](const Tensor<Scalar>& block) {
    auto logits = model.forward_segment({block}, false);
    Tensor<Scalar>& l = logits[0];
    const index_t nv = l.size() / 2;
    Tensor<Scalar> rows({nv, 2});
    for (index_t v = 0; v < nv; ++v) {
      rows[v * 2] = l[v];
      rows[v * 2 + 1] = l[nv + v];
    }
    Tensor<Scalar> prob_rows;
    softmax_rows(rows, prob_rows);
    Tensor<Scalar> probs(l.shape());
    for (index_t v = 0; v < nv; ++v) {
      probs[v] = prob_rows[v * 2];
      probs[nv + v] = prob_rows[v * 2 + 1];
    }
    return probs;
  };
}

// Whole-volume Dice of a model against a sample's ground truth.
template <typename Scalar>
double evaluate_dice(SegModel<Scalar>& model, const Sample<Scalar>& sample,
                     const InferenceConfig& cfg) {
  if (!sample.lesion_mask) throw ConfigError("evaluate_dice: sample has no mask");
  const Volume<Scalar> prob = sliding_window_predict(model_predictor(model), sample, cfg);
  return dice_score(threshold_volume(prob, cfg.threshold), *sample.lesion_mask);
}

}  // namespace ssl2
