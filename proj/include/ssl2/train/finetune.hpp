#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssl2/augment/augment.hpp"
#include "ssl2/eval/sliding_window.hpp"
#include "ssl2/io/checkpoint.hpp"
#include "ssl2/losses/losses.hpp"
#include "ssl2/nn/model.hpp"
#include "ssl2/nn/optim.hpp"
#include "ssl2/volume/volume.hpp"

namespace ssl2 {

enum class Strategy {
  FullySupervised,
  MeanTeacher,
  EntropyMin,
  Adversarial,
  Uamt,
  FixMatch,
  Cps,
};

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::FullySupervised: return "fully_supervised";
    case Strategy::MeanTeacher: return "mean_teacher";
    case Strategy::EntropyMin: return "entropy_min";
    case Strategy::Adversarial: return "adversarial";
    case Strategy::Uamt: return "uamt";
    case Strategy::FixMatch: return "fixmatch";
    case Strategy::Cps: return "cps";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  for (Strategy st : {Strategy::FullySupervised, Strategy::MeanTeacher, Strategy::EntropyMin,
                      Strategy::Adversarial, Strategy::Uamt, Strategy::FixMatch, Strategy::Cps})
    if (s == strategy_name(st)) return st;
  throw ConfigError("unknown strategy: " + s);
}

struct SemiLossWeights {
  double lambda_semi = 1.0;
  double ema_decay = 0.99;          // Mean Teacher / UAMT
  double mt_noise_sigma = 0.1;      // Gaussian input noise on [0,1] intensities
  double fixmatch_tau = 0.95;       // confidence threshold
  double fixmatch_weak_sigma = 0.05;
  int uamt_passes = 8;              // stochastic teacher passes
  double uamt_h_start = 0.75;       // threshold ramps from start*ln2 to ln2
  double adversarial_weight = 1.0;  // extra scale on the generator term

  void validate() const {
    if (lambda_semi < 0) throw ConfigError("lambda_semi must be >= 0");
    if (!(ema_decay >= 0 && ema_decay <= 1)) throw ConfigError("ema_decay must be in [0,1]");
    if (mt_noise_sigma < 0) throw ConfigError("mt_noise_sigma must be >= 0");
    if (!(fixmatch_tau > 0 && fixmatch_tau < 1)) throw ConfigError("fixmatch_tau must be in (0,1)");
    if (uamt_passes < 1) throw ConfigError("uamt_passes must be >= 1");
    if (!(uamt_h_start > 0 && uamt_h_start <= 1)) throw ConfigError("uamt_h_start must be in (0,1]");
    if (adversarial_weight < 0) throw ConfigError("adversarial_weight must be >= 0");
  }
};

struct FinetuneConfig {
  Strategy strategy = Strategy::Cps;
  EncoderConfig encoder;
  SemiLossWeights weights;
  double learning_rate = 1e-4;  // SGD
  double momentum = 0.0;
  int labeled_per_step = 1;    // subjects per iteration
  int unlabeled_per_step = 1;  // subjects per iteration, equal to labeled for semi
  int subvols_per_subject = 2;
  index_t subvolume_size = 96;
  int max_steps = 100;
  int eval_every = 0;  // 0 disables periodic validation
  std::uint64_t seed = 0;
  std::optional<std::string> init_checkpoint;
  bool cps_average_inference = false;

  bool is_semi() const { return strategy != Strategy::FullySupervised; }

  void validate() const {
    encoder.validate();
    weights.validate();
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (labeled_per_step < 1) throw ConfigError("labeled_per_step must be >= 1");
    if (subvols_per_subject < 1) throw ConfigError("subvols_per_subject must be >= 1");
    if (is_semi() && labeled_per_step != unlabeled_per_step)
      throw ConfigError("semi strategies require labeled_per_step == unlabeled_per_step");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (subvolume_size != encoder.input_size)
      throw ConfigError("subvolume_size must equal encoder.input_size");
  }
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t s = seed ^ fnv1a64(tag);
  return splitmix64(s);
}

namespace nn {

// 4-layer strided conv classifier over predicted probability maps, emitting a
// realness score in (0,1).
template <typename Scalar>
class Discriminator {
 public:
  explicit Discriminator(std::uint64_t seed)
      : c1(2, 8, 4, 2, 1), c2(8, 16, 4, 2, 1), c3(16, 32, 4, 2, 1), c4(32, 32, 4, 2, 1), fc(32, 1) {
    c1.register_params(reg_, "disc.c1");
    c2.register_params(reg_, "disc.c2");
    c3.register_params(reg_, "disc.c3");
    c4.register_params(reg_, "disc.c4");
    fc.register_params(reg_, "disc.fc");
    Rng rng = Rng::root(seed).fork("disc_init");
    c1.init(rng);
    c2.init(rng);
    c3.init(rng);
    c4.init(rng);
    fc.init(rng);
    set_slots(1);
  }

  void set_slots(int n) {
    for (auto* m : std::initializer_list<Module<Scalar>*>{&c1, &a1, &c2, &a2, &c3, &a3, &c4, &a4, &fc})
      m->set_slots(n);
    cache_.resize(static_cast<std::size_t>(n));
  }

  ParamRegistry<Scalar>& params() { return reg_; }
  void zero_grads() { reg_.zero_grads(); }

  Scalar forward(const Tensor<Scalar>& probs, int slot, bool train) {
    Tensor<Scalar> h = a1.forward(c1.forward(probs, slot, train), slot, train);
    h = a2.forward(c2.forward(h, slot, train), slot, train);
    h = a3.forward(c3.forward(h, slot, train), slot, train);
    h = a4.forward(c4.forward(h, slot, train), slot, train);
    // global average pool per channel
    const index_t c = h.dim(0), nv = h.size() / c;
    MatrixX<Scalar> pooled(1, c);
    for (index_t ci = 0; ci < c; ++ci) {
      Scalar acc = 0;
      for (index_t v = 0; v < nv; ++v) acc += h.data()[ci * nv + v];
      pooled(0, ci) = acc / static_cast<Scalar>(nv);
    }
    const Scalar z = fc.forward(pooled, slot, train)(0, 0);
    const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-z));
    if (train) cache_.at(static_cast<std::size_t>(slot)) = {h.shape(), s};
    return s;
  }

  Tensor<Scalar> backward(Scalar dscore, int slot) {
    const auto& [hshape, s] = cache_.at(static_cast<std::size_t>(slot));
    const Scalar dz = dscore * s * (Scalar(1) - s);
    MatrixX<Scalar> dpool = fc.backward(MatrixX<Scalar>::Constant(1, 1, dz), slot);
    Tensor<Scalar> dh(hshape);
    const index_t c = hshape[0];
    const index_t nv = dh.size() / c;
    for (index_t ci = 0; ci < c; ++ci)
      for (index_t v = 0; v < nv; ++v) dh.data()[ci * nv + v] = dpool(0, ci) / static_cast<Scalar>(nv);
    Tensor<Scalar> d = c4.backward(a4.backward(dh, slot), slot);
    d = c3.backward(a3.backward(d, slot), slot);
    d = c2.backward(a2.backward(d, slot), slot);
    return c1.backward(a1.backward(d, slot), slot);
  }

 private:
  Conv3d<Scalar> c1, c2, c3, c4;
  LeakyRelu<Scalar> a1, a2, a3, a4;
  Dense<Scalar> fc;
  ParamRegistry<Scalar> reg_;
  struct Cache {
    std::vector<index_t> hshape;
    Scalar score;
  };
  std::vector<Cache> cache_;
};

}  // namespace nn

// ---------------------------------------------------------------------------
// Strategy state: one or two networks, optional EMA teacher, optional
// discriminator.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct TrainState {
  Strategy strategy = Strategy::FullySupervised;
  std::unique_ptr<SegModel<Scalar>> net1;
  std::unique_ptr<SegModel<Scalar>> net2;     // CPS only
  std::unique_ptr<SegModel<Scalar>> teacher;  // MT / UAMT
  EMAState<Scalar> ema;
  std::unique_ptr<nn::Discriminator<Scalar>> disc;  // adversarial only
  std::unique_ptr<Sgd<Scalar>> opt1, opt2, opt_disc;
  int step = 0;
  int max_steps = 0;
};

template <typename Scalar>
TrainState<Scalar> init_models(const FinetuneConfig& cfg) {
  cfg.validate();
  TrainState<Scalar> state;
  state.strategy = cfg.strategy;
  state.max_steps = cfg.max_steps;

  state.net1 = build_model<Scalar>(cfg.encoder, false, true, derive_seed(cfg.seed, "init_net1"));
  state.net1->seed_dropout(derive_seed(cfg.seed, "dropout_net1"));
  if (cfg.init_checkpoint) load_encoder_into(*state.net1, *cfg.init_checkpoint);
  state.opt1 = std::make_unique<Sgd<Scalar>>(cfg.learning_rate, cfg.momentum);

  switch (cfg.strategy) {
    case Strategy::Cps:
      state.net2 = build_model<Scalar>(cfg.encoder, false, true, derive_seed(cfg.seed, "init_net2"));
      state.net2->seed_dropout(derive_seed(cfg.seed, "dropout_net2"));
      if (cfg.init_checkpoint) load_encoder_into(*state.net2, *cfg.init_checkpoint);
      state.opt2 = std::make_unique<Sgd<Scalar>>(cfg.learning_rate, cfg.momentum);
      break;
    case Strategy::MeanTeacher:
    case Strategy::Uamt: {
      state.teacher = build_model<Scalar>(cfg.encoder, false, true, derive_seed(cfg.seed, "init_net1"));
      state.teacher->seed_dropout(derive_seed(cfg.seed, "dropout_teacher"));
      state.ema = EMAState<Scalar>::from(state.net1->params(), cfg.weights.ema_decay);
      state.ema.copy_into(state.teacher->params());  // teacher starts equal to the student
      break;
    }
    case Strategy::Adversarial:
      state.disc = std::make_unique<nn::Discriminator<Scalar>>(derive_seed(cfg.seed, "disc"));
      state.opt_disc = std::make_unique<Sgd<Scalar>>(cfg.learning_rate, cfg.momentum);
      break;
    default:
      break;
  }
  return state;
}

// ---------------------------------------------------------------------------
// Loss plumbing: channel-major logits <-> per-voxel probability rows.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> rows_from_chw(const Tensor<Scalar>& t) {
  const index_t nv = t.size() / 2;
  Tensor<Scalar> rows({nv, 2});
  for (index_t v = 0; v < nv; ++v) {
    rows[v * 2] = t[v];
    rows[v * 2 + 1] = t[nv + v];
  }
  return rows;
}

template <typename Scalar>
Tensor<Scalar> chw_from_rows(const Tensor<Scalar>& rows, const std::vector<index_t>& shape) {
  Tensor<Scalar> t(shape);
  const index_t nv = t.size() / 2;
  for (index_t v = 0; v < nv; ++v) {
    t[v] = rows[v * 2];
    t[nv + v] = rows[v * 2 + 1];
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> probability_rows(const Tensor<Scalar>& logits_chw) {
  Tensor<Scalar> probs;
  Tensor<Scalar> rows = rows_from_chw(logits_chw);
  softmax_rows(rows, probs);
  return probs;
}

// Supervised loss with sparse-slice masking: delegates to dice_ce_loss with
// the per-slice indicator broadcast over each slice's voxels (axis 2).
template <typename Scalar>
Scalar masked_supervised_loss(const Tensor<Scalar>& P_rows, const std::vector<std::uint8_t>& Y,
                              const std::vector<std::uint8_t>& labeled_slices, index_t edge,
                              Tensor<Scalar>* dP = nullptr) {
  if (labeled_slices.empty()) return dice_ce_loss(P_rows, Y, {}, dP);
  if (static_cast<index_t>(labeled_slices.size()) != edge)
    throw ShapeMismatch("masked_supervised_loss: indicator length != block edge");
  std::vector<std::uint8_t> mask(Y.size());
  for (std::size_t v = 0; v < mask.size(); ++v)
    mask[v] = labeled_slices[v % static_cast<std::size_t>(edge)];
  return dice_ce_loss(P_rows, Y, mask, dP);
}

namespace detail {

template <typename Scalar>
bool subvolume_has_supervision(const SubVolume<Scalar>& sv) {
  if (!sv.has_mask()) return false;
  if (!sv.has_slice_labels()) return true;
  for (auto b : sv.slice_labeled)
    if (b) return true;
  return false;
}

// Forward + backward of the supervised Dice+CE term for one network over the
// labeled sub-volumes. Slots [0, L) are used. Returns the mean loss.
template <typename Scalar>
double supervised_backward(SegModel<Scalar>& net, const std::vector<SubVolume<Scalar>>& labeled,
                           double scale) {
  index_t active = 0;
  for (const auto& sv : labeled) active += subvolume_has_supervision(sv);
  if (active == 0) return 0.0;

  double total = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& sv = labeled[i];
    if (!subvolume_has_supervision(sv)) continue;
    Tensor<Scalar> logits = net.forward_segment_one(sv.data, static_cast<int>(i), true);
    Tensor<Scalar> P = probability_rows(logits);
    Tensor<Scalar> dP;
    const double loss = masked_supervised_loss(P, sv.mask, sv.slice_labeled, sv.extent, &dP);
    total += loss;
    const Scalar k = static_cast<Scalar>(scale / static_cast<double>(active));
    for (index_t j = 0; j < dP.size(); ++j) dP[j] *= k;
    Tensor<Scalar> dlogits_rows;
    softmax_backward_rows(P, dP, dlogits_rows);
    net.backward_segment(chw_from_rows(dlogits_rows, logits.shape()), static_cast<int>(i));
  }
  return total / static_cast<double>(active);
}

template <typename Scalar>
Tensor<Scalar> add_gaussian_noise(const Tensor<Scalar>& x, double sigma, Rng& rng) {
  Tensor<Scalar> out = x;
  for (index_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Scalar>(
        std::clamp(static_cast<double>(out[i]) + rng.normal(0.0, sigma), 0.0, 1.0));
  }
  return out;
}

// Backward through softmax for an unsupervised gradient on probability rows.
template <typename Scalar>
void backward_prob_grad(SegModel<Scalar>& net, const Tensor<Scalar>& P, Tensor<Scalar>& dP,
                        const std::vector<index_t>& logits_shape, double scale, int slot) {
  const Scalar k = static_cast<Scalar>(scale);
  for (index_t j = 0; j < dP.size(); ++j) dP[j] *= k;
  Tensor<Scalar> dlogits_rows;
  softmax_backward_rows(P, dP, dlogits_rows);
  net.backward_segment(chw_from_rows(dlogits_rows, logits_shape), slot);
}

}  // namespace detail

struct StepLosses {
  int step = 0;
  double sup1 = 0, unsup1 = 0, total1 = 0;
  double sup2 = 0, unsup2 = 0, total2 = 0;  // CPS net2
};

// ---------------------------------------------------------------------------
// One optimizer step of the configured strategy:
// L_semi = L_sup + lambda_semi * L_unsup per trained network.
// ---------------------------------------------------------------------------

template <typename Scalar>
StepLosses finetune_step(TrainState<Scalar>& state, const std::vector<SubVolume<Scalar>>& labeled,
                         const std::vector<SubVolume<Scalar>>& unlabeled, const FinetuneConfig& cfg,
                         Rng& noise_rng, Rng& aug_rng) {
  if (state.strategy != cfg.strategy) throw StrategyMismatch("state/config strategy disagree");
  if (labeled.empty()) throw ConfigError("finetune_step: labeled batch is empty");
  const double lambda = cfg.weights.lambda_semi;
  const bool use_unlabeled = cfg.is_semi() && lambda > 0.0 && !unlabeled.empty();
  const auto L = static_cast<index_t>(labeled.size());
  const auto U = static_cast<index_t>(unlabeled.size());

  StepLosses out;
  out.step = ++state.step;
  SegModel<Scalar>& net1 = *state.net1;
  net1.set_slots(static_cast<int>(L + U));
  net1.zero_grads();
  out.sup1 = detail::supervised_backward(net1, labeled, 1.0);

  switch (state.strategy) {
    case Strategy::FullySupervised:
      break;

    case Strategy::MeanTeacher: {
      if (!use_unlabeled) break;
      double unsup = 0;
      for (index_t i = 0; i < U; ++i) {
        const auto& x = unlabeled[static_cast<std::size_t>(i)].data;
        const Tensor<Scalar> x_s = detail::add_gaussian_noise(x, cfg.weights.mt_noise_sigma, noise_rng);
        const Tensor<Scalar> x_t = detail::add_gaussian_noise(x, cfg.weights.mt_noise_sigma, noise_rng);
        const int slot = static_cast<int>(L + i);
        Tensor<Scalar> logits_s = net1.forward_segment_one(x_s, slot, true);
        Tensor<Scalar> P_s = probability_rows(logits_s);
        Tensor<Scalar> P_t = probability_rows(state.teacher->forward_segment_one(x_t, 0, false));
        Tensor<Scalar> dPs;
        unsup += mt_consistency_loss(P_s, P_t, &dPs);
        detail::backward_prob_grad(net1, P_s, dPs, logits_s.shape(), lambda / U, slot);
      }
      out.unsup1 = unsup / U;
      break;
    }

    case Strategy::EntropyMin: {
      if (!use_unlabeled) break;
      double unsup = 0;
      for (index_t i = 0; i < U; ++i) {
        const int slot = static_cast<int>(L + i);
        Tensor<Scalar> logits = net1.forward_segment_one(unlabeled[static_cast<std::size_t>(i)].data,
                                                         slot, true);
        Tensor<Scalar> P = probability_rows(logits);
        Tensor<Scalar> dP;
        unsup += entropy_min_loss(P, &dP);
        detail::backward_prob_grad(net1, P, dP, logits.shape(), lambda / U, slot);
      }
      out.unsup1 = unsup / U;
      break;
    }

    case Strategy::Uamt: {
      if (!use_unlabeled) break;
      const double ramp = state.max_steps > 0
                              ? std::min(1.0, static_cast<double>(state.step) / state.max_steps)
                              : 1.0;
      const double H = (cfg.weights.uamt_h_start + (1.0 - cfg.weights.uamt_h_start) * ramp) *
                       std::log(2.0);
      double unsup = 0;
      for (index_t i = 0; i < U; ++i) {
        const auto& x = unlabeled[static_cast<std::size_t>(i)].data;
        // predictive mean over stochastic teacher passes
        Tensor<Scalar> mean_rows;
        for (int t = 0; t < cfg.weights.uamt_passes; ++t) {
          Tensor<Scalar> P = probability_rows(state.teacher->forward_segment_one(x, 0, true));
          if (t == 0) {
            mean_rows = std::move(P);
          } else {
            for (index_t j = 0; j < mean_rows.size(); ++j) mean_rows[j] += P[j];
          }
        }
        for (index_t j = 0; j < mean_rows.size(); ++j)
          mean_rows[j] /= static_cast<Scalar>(cfg.weights.uamt_passes);
        const index_t nv = mean_rows.dim(0);
        std::vector<Scalar> uncertainty(static_cast<std::size_t>(nv));
        for (index_t v = 0; v < nv; ++v) {
          double h = 0;
          for (index_t c = 0; c < 2; ++c) {
            const double p = mean_rows[v * 2 + c];
            h -= p * safe_log(p);
          }
          uncertainty[static_cast<std::size_t>(v)] = static_cast<Scalar>(h);
        }
        const int slot = static_cast<int>(L + i);
        Tensor<Scalar> logits = net1.forward_segment_one(x, slot, true);
        Tensor<Scalar> P_s = probability_rows(logits);
        Tensor<Scalar> dPs;
        unsup += uamt_consistency_loss(P_s, mean_rows, uncertainty, static_cast<Scalar>(H), &dPs);
        detail::backward_prob_grad(net1, P_s, dPs, logits.shape(), lambda / U, slot);
      }
      out.unsup1 = unsup / U;
      break;
    }

    case Strategy::FixMatch: {
      if (!use_unlabeled) break;
      double unsup = 0;
      for (index_t i = 0; i < U; ++i) {
        const auto& sv = unlabeled[static_cast<std::size_t>(i)];
        const Tensor<Scalar> weak =
            detail::add_gaussian_noise(sv.data, cfg.weights.fixmatch_weak_sigma, noise_rng);
        Tensor<Scalar> P_w = probability_rows(net1.forward_segment_one(weak, 0, false));
        // strong view: cutout/patch-swap plus histogram shift
        Tensor<Scalar> strong = sv.data;
        const std::uint64_t noise_seed = aug_rng.next_u64();
        const auto regions = draw_cutout_regions(aug_rng, sv.extent);
        apply_cutouts(strong, sv.data, regions, Rng(noise_seed));
        std::array<std::vector<std::pair<double, double>>, 2> pts;
        for (int c = 0; c < 2; ++c) pts[static_cast<std::size_t>(c)] = draw_histogram_points(aug_rng);
        apply_histogram_shift(strong, pts);

        const int slot = static_cast<int>(L + i);
        Tensor<Scalar> logits = net1.forward_segment_one(strong, slot, true);
        Tensor<Scalar> P_s = probability_rows(logits);
        Tensor<Scalar> dPs;
        const double l = fixmatch_loss(P_w, P_s, static_cast<Scalar>(cfg.weights.fixmatch_tau), &dPs);
        unsup += l;
        if (dPs.size() > 0)
          detail::backward_prob_grad(net1, P_s, dPs, logits.shape(), lambda / U, slot);
      }
      out.unsup1 = unsup / U;
      break;
    }

    case Strategy::Adversarial: {
      if (!use_unlabeled) break;
      auto& disc = *state.disc;
      disc.set_slots(static_cast<int>(L + U));
      disc.zero_grads();
      // generator: push unlabeled predictions toward "labeled-like"
      Tensor<Scalar> s_u({U});
      std::vector<Tensor<Scalar>> P_u_vols(static_cast<std::size_t>(U));
      std::vector<Tensor<Scalar>> P_u_rows(static_cast<std::size_t>(U));
      std::vector<std::vector<index_t>> logit_shapes(static_cast<std::size_t>(U));
      for (index_t i = 0; i < U; ++i) {
        const int slot = static_cast<int>(L + i);
        Tensor<Scalar> logits = net1.forward_segment_one(unlabeled[static_cast<std::size_t>(i)].data,
                                                         slot, true);
        logit_shapes[static_cast<std::size_t>(i)] = logits.shape();
        Tensor<Scalar> P = probability_rows(logits);
        P_u_vols[static_cast<std::size_t>(i)] = chw_from_rows(P, logits.shape());
        P_u_rows[static_cast<std::size_t>(i)] = std::move(P);
        s_u[i] = disc.forward(P_u_vols[static_cast<std::size_t>(i)], static_cast<int>(i), true);
      }
      Tensor<Scalar> d_gen;
      Tensor<Scalar> dummy_lab({1}, Scalar(0.5));
      auto [gen_term, disc_unused] = adversarial_loss(dummy_lab, s_u, &d_gen);
      (void)disc_unused;
      out.unsup1 = gen_term;
      for (index_t i = 0; i < U; ++i) {
        Tensor<Scalar> dP_vol = disc.backward(d_gen[i], static_cast<int>(i));
        Tensor<Scalar> dP = rows_from_chw(dP_vol);
        detail::backward_prob_grad(net1, P_u_rows[static_cast<std::size_t>(i)], dP,
                                   logit_shapes[static_cast<std::size_t>(i)],
                                   lambda * cfg.weights.adversarial_weight, static_cast<int>(L + i));
      }
      state.opt1->step(net1.params());

      // discriminator step on detached predictions
      disc.zero_grads();
      Tensor<Scalar> s_l({L});
      for (index_t i = 0; i < L; ++i) {
        Tensor<Scalar> logits = net1.forward_segment_one(labeled[static_cast<std::size_t>(i)].data,
                                                         0, false);
        Tensor<Scalar> P = probability_rows(logits);
        s_l[i] = disc.forward(chw_from_rows(P, logits.shape()), static_cast<int>(i), true);
      }
      Tensor<Scalar> s_u2({U});
      for (index_t i = 0; i < U; ++i)
        s_u2[i] = disc.forward(P_u_vols[static_cast<std::size_t>(i)], static_cast<int>(L + i), true);
      Tensor<Scalar> ddl, ddu;
      auto [gen2, disc_term] =
          adversarial_loss(s_l, s_u2, static_cast<Tensor<Scalar>*>(nullptr), &ddl, &ddu);
      (void)gen2;
      out.unsup2 = disc_term;  // reported for monitoring
      for (index_t i = 0; i < L; ++i) disc.backward(ddl[i], static_cast<int>(i));
      for (index_t i = 0; i < U; ++i) disc.backward(ddu[i], static_cast<int>(L + i));
      state.opt_disc->step(disc.params());
      out.total1 = out.sup1 + lambda * out.unsup1;
      return out;  // generator already stepped
    }

    case Strategy::Cps: {
      SegModel<Scalar>& net2 = *state.net2;
      net2.set_slots(static_cast<int>(L + U));
      net2.zero_grads();
      out.sup2 = detail::supervised_backward(net2, labeled, 1.0);
      if (use_unlabeled) {
        double u1 = 0, u2 = 0;
        for (index_t i = 0; i < U; ++i) {
          const auto& x = unlabeled[static_cast<std::size_t>(i)].data;
          const int slot = static_cast<int>(L + i);
          Tensor<Scalar> logits1 = net1.forward_segment_one(x, slot, true);
          Tensor<Scalar> logits2 = net2.forward_segment_one(x, slot, true);
          Tensor<Scalar> P1 = probability_rows(logits1);
          Tensor<Scalar> P2 = probability_rows(logits2);
          Tensor<Scalar> d1, d2;
          auto [l1, l2] = cps_loss(P1, P2, &d1, &d2);
          u1 += l1;
          u2 += l2;
          detail::backward_prob_grad(net1, P1, d1, logits1.shape(), lambda / U, slot);
          detail::backward_prob_grad(net2, P2, d2, logits2.shape(), lambda / U, slot);
        }
        out.unsup1 = u1 / U;
        out.unsup2 = u2 / U;
      }
      state.opt1->step(net1.params());
      state.opt2->step(net2.params());
      out.total1 = out.sup1 + lambda * out.unsup1;
      out.total2 = out.sup2 + lambda * out.unsup2;
      return out;
    }
  }

  state.opt1->step(net1.params());
  if (state.teacher) {
    ema_update(state.ema, net1.params());
    state.ema.copy_into(state.teacher->params());
  }
  out.total1 = out.sup1 + lambda * out.unsup1;
  return out;
}

// ---------------------------------------------------------------------------
// Data sampling and the full fine-tuning loop.
// ---------------------------------------------------------------------------

template <typename Scalar>
std::vector<SubVolume<Scalar>> draw_batch(const std::vector<const Sample<Scalar>*>& pool,
                                          int subjects, int subvols, index_t size, Rng& rng,
                                          bool require_labeled_slice) {
  std::vector<SubVolume<Scalar>> out;
  for (int s = 0; s < subjects; ++s) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<index_t>(pool.size()) - 1));
    auto svs = sample_subvolumes(*pool[idx], subvols, size, rng, require_labeled_slice);
    for (auto& sv : svs) out.push_back(std::move(sv));
  }
  return out;
}

struct FinetuneReport {
  std::vector<StepLosses> steps;
  std::vector<std::pair<int, double>> eval_dice;  // (step, mean validation Dice)
};

template <typename Scalar>
struct FinetuneResult {
  TrainState<Scalar> state;
  FinetuneReport report;

  SegModel<Scalar>& inference_model() { return *state.net1; }
};

template <typename Scalar>
FinetuneResult<Scalar> run_finetune(const std::vector<const Sample<Scalar>*>& labeled_set,
                                    const std::vector<const Sample<Scalar>*>& unlabeled_set,
                                    const FinetuneConfig& cfg,
                                    const std::vector<const Sample<Scalar>*>& validation_set = {}) {
  cfg.validate();
  if (labeled_set.empty()) throw TooFewSamples("run_finetune: labeled set is empty");
  const bool wants_unlabeled = cfg.is_semi() && cfg.weights.lambda_semi > 0.0;
  if (wants_unlabeled && unlabeled_set.empty())
    throw TooFewSamples("run_finetune: semi strategy with empty unlabeled set");

  FinetuneResult<Scalar> result{init_models<Scalar>(cfg), {}};

  Rng root = Rng::root(cfg.seed);
  Rng data_lab = root.fork("data_labeled");
  Rng data_unlab = root.fork("data_unlabeled");
  Rng noise = root.fork("noise");
  Rng aug = root.fork("finetune_augment");

  InferenceConfig eval_cfg;
  eval_cfg.window = cfg.subvolume_size;
  eval_cfg.overlap = cfg.subvolume_size / 4;

  for (int step = 1; step <= cfg.max_steps; ++step) {
    auto labeled = draw_batch(labeled_set, cfg.labeled_per_step, cfg.subvols_per_subject,
                              cfg.subvolume_size, data_lab, /*require_labeled_slice=*/true);
    std::vector<SubVolume<Scalar>> unlabeled;
    if (cfg.is_semi())
      unlabeled = draw_batch(unlabeled_set, cfg.unlabeled_per_step, cfg.subvols_per_subject,
                             cfg.subvolume_size, data_unlab, false);
    result.report.steps.push_back(
        finetune_step(result.state, labeled, unlabeled, cfg, noise, aug));

    if (cfg.eval_every > 0 && !validation_set.empty() &&
        (step % cfg.eval_every == 0 || step == cfg.max_steps)) {
      double acc = 0;
      for (const auto* s : validation_set) acc += evaluate_dice(result.inference_model(), *s, eval_cfg);
      result.report.eval_dice.emplace_back(step, acc / static_cast<double>(validation_set.size()));
    }
  }
  return result;
}

}  // namespace ssl2
