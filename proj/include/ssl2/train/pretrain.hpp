#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssl2/augment/augment.hpp"
#include "ssl2/io/checkpoint.hpp"
#include "ssl2/losses/losses.hpp"
#include "ssl2/nn/model.hpp"
#include "ssl2/nn/optim.hpp"
#include "ssl2/volume/volume.hpp"

namespace ssl2 {

struct PretrainConfig {
  EncoderConfig encoder;
  PretrainLossWeights weights;
  int batch_subjects_N = 2;
  double learning_rate = 1e-4;  // SGD
  double momentum = 0.0;
  int max_steps = 1000;
  int eval_every = 100;
  int patience = 5;
  std::uint64_t seed = 0;
  index_t subvolume_size = 96;

  void validate() const {
    encoder.validate();
    weights.validate();
    if (batch_subjects_N < 2) throw ConfigError("batch_subjects_N must be >= 2");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (subvolume_size != encoder.input_size)
      throw ConfigError("subvolume_size must equal encoder.input_size");
  }
};

struct PretrainStepLoss {
  int step = 0;
  double rot = 0, inpaint = 0, contrast = 0, total = 0;
};

struct PretrainReport {
  std::vector<PretrainStepLoss> steps;
  std::vector<std::pair<int, double>> eval_l1;  // (step, mean eval L1)
  int best_step = 0;
  double best_l1 = 0;
  std::string checkpoint_path;
  bool stopped_early = false;
};

// ---------------------------------------------------------------------------
// 80/20 corpus split, deterministic per seed; eval share rounded down.
// ---------------------------------------------------------------------------

template <typename Scalar>
std::pair<std::vector<const Sample<Scalar>*>, std::vector<const Sample<Scalar>*>> split_corpus(
    const std::vector<Sample<Scalar>>& samples, double ratio, std::uint64_t seed) {
  if (samples.size() < 5) throw TooFewSamples("split_corpus: need at least 5 samples");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split_corpus: ratio must be in (0,1)");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::root(seed).fork("corpus_split");
  rng.shuffle(order);
  const auto n = static_cast<index_t>(samples.size());
  const auto eval_n = static_cast<index_t>(std::floor(static_cast<double>(n) * (1.0 - ratio) + 1e-9));
  std::pair<std::vector<const Sample<Scalar>*>, std::vector<const Sample<Scalar>*>> out;
  for (index_t i = 0; i < n; ++i) {
    const Sample<Scalar>* s = &samples[order[static_cast<std::size_t>(i)]];
    if (i < n - eval_n)
      out.first.push_back(s);
    else
      out.second.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// One optimizer step on the weighted triple proxy loss over a 2N-view batch.
// ---------------------------------------------------------------------------

template <typename Scalar>
PretrainStepLoss pretrain_step(SegModel<Scalar>& model, const ContrastiveBatch<Scalar>& batch,
                               const PretrainLossWeights& weights, Sgd<Scalar>& opt) {
  if (!model.has_proxy()) throw HeadsAbsent("pretrain_step: model has no proxy heads");
  const auto m = static_cast<index_t>(batch.views.size());
  if (m < 4) throw BatchTooSmall("pretrain_step: need at least 2 subjects");

  std::vector<Tensor<Scalar>> inputs;
  inputs.reserve(static_cast<std::size_t>(m));
  for (const auto& v : batch.views) inputs.push_back(v.data);
  model.set_slots(static_cast<int>(m));
  auto outs = model.forward_proxy(inputs, true);

  // component losses and per-view gradients
  PretrainStepLoss loss;
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);

  Tensor<Scalar> V({m, model.config().proj_dim});
  for (index_t v = 0; v < m; ++v)
    for (index_t k = 0; k < model.config().proj_dim; ++k)
      V[v * model.config().proj_dim + k] = outs[static_cast<std::size_t>(v)].projection[k];

  std::vector<Tensor<Scalar>> d_rot(static_cast<std::size_t>(m));
  std::vector<Tensor<Scalar>> d_recon(static_cast<std::size_t>(m));
  for (index_t v = 0; v < m; ++v) {
    Tensor<Scalar> g;
    loss.rot += rotation_loss(outs[static_cast<std::size_t>(v)].rot_logits,
                              batch.records[static_cast<std::size_t>(v)].rotation_class, &g);
    for (index_t i = 0; i < 4; ++i) g[i] *= static_cast<Scalar>(weights.lambda_rot) * inv_m;
    d_rot[static_cast<std::size_t>(v)] = std::move(g);

    Tensor<Scalar> gi;
    loss.inpaint += inpaint_loss(outs[static_cast<std::size_t>(v)].recon,
                                 batch.inpaint_targets[static_cast<std::size_t>(v)], &gi);
    for (index_t i = 0; i < gi.size(); ++i) gi[i] *= static_cast<Scalar>(weights.lambda_inpaint) * inv_m;
    d_recon[static_cast<std::size_t>(v)] = std::move(gi);
  }
  loss.rot /= static_cast<double>(m);
  loss.inpaint /= static_cast<double>(m);

  Tensor<Scalar> dV;
  loss.contrast = contrastive_loss(V, batch.subject_of, batch.view_of,
                                   static_cast<Scalar>(weights.temperature_t), &dV);
  loss.total = pretrain_loss<double>(loss.rot, loss.inpaint, loss.contrast, weights);

  model.zero_grads();
  const index_t pd = model.config().proj_dim;
  for (index_t v = 0; v < m; ++v) {
    Tensor<Scalar> d_proj({pd});
    for (index_t k = 0; k < pd; ++k)
      d_proj[k] = static_cast<Scalar>(weights.lambda_contrast) * dV[v * pd + k];
    model.backward_proxy(d_rot[static_cast<std::size_t>(v)], d_recon[static_cast<std::size_t>(v)],
                         d_proj, static_cast<int>(v));
  }
  opt.step(model.params());
  return loss;
}

// ---------------------------------------------------------------------------
// Stationary evaluation metric: center-cropped block per eval sample with a
// fixed per-sample cutout, reconstruction L1 against the clean block.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> center_block(const Sample<Scalar>& s, index_t size) {
  const auto padded = pad_sample_to(s, size);
  const auto& e = padded.extent();
  const std::array<index_t, 3> origin{(e[0] - size) / 2, (e[1] - size) / 2, (e[2] - size) / 2};
  return extract_subvolume(padded, origin, size).data;
}

template <typename Scalar>
double eval_inpaint_l1(SegModel<Scalar>& model, const std::vector<const Sample<Scalar>*>& eval_set,
                       index_t size) {
  double acc = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const Tensor<Scalar> clean = center_block(*eval_set[i], size);
    Tensor<Scalar> corrupted = clean;
    Rng cut_rng(0xe7a1u + 31 * static_cast<std::uint64_t>(i));  // fixed per sample
    const auto regions = draw_cutout_regions(cut_rng, size);
    apply_cutouts(corrupted, clean, regions, Rng(0x90ccu + static_cast<std::uint64_t>(i)));
    auto out = model.forward_proxy({corrupted}, false);
    acc += inpaint_loss(out[0].recon, clean);
  }
  return acc / static_cast<double>(eval_set.size());
}

// ---------------------------------------------------------------------------
// Full pre-training run with inpainting-L1 early stopping.
// ---------------------------------------------------------------------------

template <typename Scalar>
PretrainReport run_pretraining(const std::vector<Sample<Scalar>>& corpus, const PretrainConfig& cfg,
                               const std::string& checkpoint_path) {
  cfg.validate();
  if (corpus.empty()) throw TooFewSamples("run_pretraining: empty corpus");
  auto [train, eval] = split_corpus(corpus, 0.8, cfg.seed);

  auto model = build_model<Scalar>(cfg.encoder, /*with_proxy=*/true, /*with_decoder=*/false,
                                   cfg.seed);
  Sgd<Scalar> opt(cfg.learning_rate, cfg.momentum);

  Rng root = Rng::root(cfg.seed);
  Rng data_rng = root.fork("pretrain_data");
  Rng aug_rng = root.fork("pretrain_augment");

  PretrainReport report;
  report.checkpoint_path = checkpoint_path;
  double best = eval_inpaint_l1(*model, eval, cfg.subvolume_size);
  report.eval_l1.emplace_back(0, best);
  report.best_step = 0;
  report.best_l1 = best;
  save_checkpoint(*model, checkpoint_path, "pretrain", 0);

  int stale = 0;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    // draw N distinct subjects
    std::vector<std::size_t> pool(train.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    data_rng.shuffle(pool);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_subjects_N), pool.size());
    std::vector<SubVolume<Scalar>> sources;
    for (std::size_t i = 0; i < n; ++i) {
      auto svs = sample_subvolumes(*train[pool[i]], 1, cfg.subvolume_size, data_rng);
      sources.push_back(std::move(svs[0]));
    }
    const auto batch = build_contrastive_batch(sources, aug_rng);
    PretrainStepLoss loss = pretrain_step(*model, batch, cfg.weights, opt);
    loss.step = step;
    report.steps.push_back(loss);

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double l1 = eval_inpaint_l1(*model, eval, cfg.subvolume_size);
      report.eval_l1.emplace_back(step, l1);
      if (l1 < report.best_l1) {
        report.best_l1 = l1;
        report.best_step = step;
        stale = 0;
        save_checkpoint(*model, checkpoint_path, "pretrain", step);
      } else {
        if (++stale >= cfg.patience) {
          report.stopped_early = true;
          break;
        }
      }
    }
  }
  return report;
}

}  // namespace ssl2
