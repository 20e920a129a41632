// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssl2/augment/augment.hpp"
#include "ssl2/eval/experiments.hpp"
#include "ssl2/eval/sliding_window.hpp"
#include "ssl2/io/checkpoint.hpp"
#include "ssl2/losses/losses.hpp"
#include "ssl2/nn/model.hpp"
#include "ssl2/train/finetune.hpp"
#include "ssl2/train/pretrain.hpp"
#include "ssl2/volume/phantom.hpp"

using namespace ssl2;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int failures = 0;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      ++failures;
      notes.push_back(what);
    }
  }
  void expect_near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s: got %.10g want %.10g (tol %g)", what.c_str(), got, want, tol);
      expect(false, buf);
    }
  }
};

Tensor<double> random_prob_rows(index_t n, Rng& rng) {
  Tensor<double> P({n, 2});
  for (index_t i = 0; i < n; ++i) {
    const double p = rng.uniform(0.05, 0.95);
    P[i * 2] = 1 - p;
    P[i * 2 + 1] = p;
  }
  return P;
}

template <typename F>
double max_rel_grad_err(Tensor<double>& x, const Tensor<double>& grad, F f, double h = 1e-6) {
  double worst = 0;
  for (index_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double lp = f();
    x[i] = keep - h;
    const double lm = f();
    x[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    const double err = std::abs(fd - grad[i]) / std::max({1.0, std::abs(fd), std::abs(grad[i])});
    worst = std::max(worst, err);
  }
  return worst;
}

// --------------------------------------------------------------------------
// Criterion 1: loss-oracle suite, >= 100 random 4^3 / N=2..4 instances per
// loss within 1e-6; fixed-point zeros hold exactly.
// --------------------------------------------------------------------------

Criterion criterion_loss_oracles() {
  Criterion c;
  Rng rng(101);

  {
    Tensor<double> P({8, 2});
    std::vector<std::uint8_t> Y(8);
    for (index_t i = 0; i < 8; ++i) {
      Y[static_cast<std::size_t>(i)] = i % 2;
      P[i * 2 + (i % 2)] = 1.0;
      P[i * 2 + 1 - (i % 2)] = 0.0;
    }
    c.expect(dice_ce_loss(P, Y) < 1e-5, "dice_ce fixed point");
    Tensor<double> I({2, 3, 3, 3}, 0.4);
    c.expect(inpaint_loss(I, I) == 0.0, "inpaint fixed point");
    Tensor<double> logits({4}, -20.0);
    logits[1] = 20.0;
    c.expect(rotation_loss(logits, 1) < 1e-9, "rotation fixed point");
    c.expect(mt_consistency_loss(P, P) == 0.0, "mt fixed point");
    auto [t1, t2] = cps_loss(P, P);
    c.expect(t1 < 1e-9 && t2 < 1e-9, "cps fixed point");
    c.expect(entropy_min_loss(P) < 1e-9, "entropy fixed point");
    c.expect(fixmatch_loss(P, P, 0.95) < 1e-9, "fixmatch fixed point");
    Tensor<double> L({4}, 1.0 - 1e-12), U({4}, 1e-12);
    c.expect(adversarial_loss(L, U).second < 1e-9, "adversarial disc fixed point");
    std::vector<double> unc(8, 10.0);
    c.expect(uamt_consistency_loss(P, P, unc, 0.5) == 0.0, "uamt fixed point");
  }

  const index_t nvox = 64;  // 4^3 grids
  for (int rep = 0; rep < 100; ++rep) {
    {
      Tensor<double> P = random_prob_rows(nvox, rng);
      std::vector<std::uint8_t> Y(static_cast<std::size_t>(nvox));
      for (auto& y : Y) y = rng.bernoulli(0.35);
      double inter = 0, sp = 0, sy = 0, ce = 0;
      for (index_t i = 0; i < nvox; ++i) {
        inter += P[i * 2 + 1] * Y[static_cast<std::size_t>(i)];
        sp += P[i * 2 + 1];
        sy += Y[static_cast<std::size_t>(i)];
        ce -= std::log(P[i * 2 + Y[static_cast<std::size_t>(i)]]);
      }
      const double want = 1.0 - (2 * inter + 1e-5) / (sp + sy + 1e-5) + ce / nvox;
      c.expect_near(dice_ce_loss(P, Y), want, 1e-6, "dice_ce oracle");
    }
    {
      Tensor<double> logits({4});
      for (index_t i = 0; i < 4; ++i) logits[i] = rng.normal(0.0, 2.0);
      const int r = static_cast<int>(rng.uniform_int(0, 3));
      double mx = logits[0];
      for (index_t i = 1; i < 4; ++i) mx = std::max(mx, logits[i]);
      double z = 0;
      for (index_t i = 0; i < 4; ++i) z += std::exp(logits[i] - mx);
      c.expect_near(rotation_loss(logits, r), -(logits[r] - mx - std::log(z)), 1e-6, "rotation oracle");
    }
    {
      Tensor<double> A({nvox}), B({nvox});
      double acc = 0;
      for (index_t i = 0; i < nvox; ++i) {
        A[i] = rng.uniform();
        B[i] = rng.uniform();
        acc += std::abs(A[i] - B[i]);
      }
      c.expect_near(inpaint_loss(A, B), acc / nvox, 1e-6, "inpaint oracle");
    }
    {
      const int N = 2 + static_cast<int>(rng.uniform_int(0, 2));
      const index_t d = 12;
      Tensor<double> V({2 * N, d});
      std::vector<int> subj, view;
      for (int i = 0; i < 2 * N; ++i) {
        subj.push_back(i / 2);
        view.push_back(i % 2 + 1);
        for (index_t k = 0; k < d; ++k) V[i * d + k] = rng.normal(0.0, 1.0);
      }
      const double t = rng.uniform(0.2, 1.2);
      auto sim = [&](int i, int j) {
        double dot = 0, ni = 0, nj = 0;
        for (index_t k = 0; k < d; ++k) {
          dot += V[i * d + k] * V[j * d + k];
          ni += V[i * d + k] * V[i * d + k];
          nj += V[j * d + k] * V[j * d + k];
        }
        return dot / (std::sqrt(ni) * std::sqrt(nj));
      };
      double total = 0;
      for (int a = 0; a < 2 * N; ++a) {
        const int pos = (a % 2 == 0) ? a + 1 : a - 1;
        double den = 0;
        for (int b = 0; b < 2 * N; ++b)
          if (b / 2 != a / 2) den += std::exp(sim(a, b) / t);
        total += -std::log(std::exp(sim(a, pos) / t) / den);
      }
      c.expect_near(contrastive_loss(V, subj, view, t), total / (2 * N), 1e-6, "contrastive oracle");
    }
    {
      Tensor<double> P1 = random_prob_rows(nvox, rng), P2 = random_prob_rows(nvox, rng);
      double acc = 0;
      for (index_t i = 0; i < P1.size(); ++i) acc += (P1[i] - P2[i]) * (P1[i] - P2[i]);
      c.expect_near(mt_consistency_loss(P1, P2), acc / nvox, 1e-6, "mt oracle");
    }
    {
      Tensor<double> P1 = random_prob_rows(nvox, rng), P2 = random_prob_rows(nvox, rng);
      double ce1 = 0, ce2 = 0;
      for (index_t i = 0; i < nvox; ++i) {
        const int l2 = P2[i * 2 + 1] > P2[i * 2] ? 1 : 0;
        const int l1 = P1[i * 2 + 1] > P1[i * 2] ? 1 : 0;
        ce1 -= std::log(P1[i * 2 + l2]);
        ce2 -= std::log(P2[i * 2 + l1]);
      }
      auto [t1, t2] = cps_loss(P1, P2);
      c.expect_near(t1, ce1 / nvox, 1e-6, "cps oracle term1");
      c.expect_near(t2, ce2 / nvox, 1e-6, "cps oracle term2");
    }
    {
      Tensor<double> P = random_prob_rows(nvox, rng);
      double acc = 0;
      for (index_t i = 0; i < nvox; ++i)
        acc -= P[i * 2] * std::log(P[i * 2]) + P[i * 2 + 1] * std::log(P[i * 2 + 1]);
      c.expect_near(entropy_min_loss(P), acc / nvox, 1e-6, "entropy oracle");
    }
    {
      Tensor<double> W = random_prob_rows(nvox, rng), S = random_prob_rows(nvox, rng);
      const double tau = 0.7;
      double acc = 0;
      int m = 0;
      for (index_t i = 0; i < nvox; ++i) {
        const int k = W[i * 2 + 1] > W[i * 2] ? 1 : 0;
        if (W[i * 2 + k] >= tau) {
          ++m;
          acc -= std::log(S[i * 2 + k]);
        }
      }
      c.expect_near(fixmatch_loss(W, S, tau), m ? acc / m : 0.0, 1e-6, "fixmatch oracle");
    }
    {
      Tensor<double> L({6}), U({6});
      double g = 0, dl = 0, du = 0;
      for (index_t i = 0; i < 6; ++i) {
        L[i] = rng.uniform(0.05, 0.95);
        U[i] = rng.uniform(0.05, 0.95);
        g -= std::log(U[i]);
        dl -= std::log(L[i]);
        du -= std::log(1 - U[i]);
      }
      auto [gen, disc] = adversarial_loss(L, U);
      c.expect_near(gen, g / 6, 1e-6, "adversarial gen oracle");
      c.expect_near(disc, 0.5 * (dl / 6 + du / 6), 1e-6, "adversarial disc oracle");
    }
    {
      Tensor<double> Ps = random_prob_rows(nvox, rng), Pt = random_prob_rows(nvox, rng);
      std::vector<double> unc(static_cast<std::size_t>(nvox));
      for (auto& u : unc) u = rng.uniform(0.0, 1.0);
      const double H = 0.5;
      double acc = 0;
      int m = 0;
      for (index_t i = 0; i < nvox; ++i) {
        if (!(unc[static_cast<std::size_t>(i)] < H)) continue;
        ++m;
        for (index_t ch = 0; ch < 2; ++ch) {
          const double e = Ps[i * 2 + ch] - Pt[i * 2 + ch];
          acc += e * e;
        }
      }
      c.expect_near(uamt_consistency_loss(Ps, Pt, unc, H), m ? acc / m : 0.0, 1e-6, "uamt oracle");
    }
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 2: analytic vs central finite differences within 1e-4 relative;
// the CPS stop-gradient branch has exactly zero gradient.
// --------------------------------------------------------------------------

Criterion criterion_gradients() {
  Criterion c;
  Rng rng(202);
  const index_t nvox = 64;

  {
    Tensor<double> P = random_prob_rows(nvox, rng);
    std::vector<std::uint8_t> Y(static_cast<std::size_t>(nvox));
    for (auto& y : Y) y = rng.bernoulli(0.4);
    Tensor<double> g;
    dice_ce_loss(P, Y, {}, &g);
    c.expect(max_rel_grad_err(P, g, [&] { return static_cast<double>(dice_ce_loss(P, Y)); }) < 1e-4,
             "dice_ce gradient vs finite differences");
  }
  {
    Tensor<double> V({6, 8});
    for (index_t i = 0; i < V.size(); ++i) V[i] = rng.normal(0.0, 1.0);
    const std::vector<int> subj{0, 0, 1, 1, 2, 2}, view{1, 2, 1, 2, 1, 2};
    Tensor<double> g;
    contrastive_loss(V, subj, view, 0.5, &g);
    c.expect(max_rel_grad_err(
                 V, g, [&] { return static_cast<double>(contrastive_loss(V, subj, view, 0.5)); }) < 1e-4,
             "contrastive gradient vs finite differences");
  }
  {
    Tensor<double> P1 = random_prob_rows(nvox, rng), P2 = random_prob_rows(nvox, rng);
    Tensor<double> g;
    mt_consistency_loss(P1, P2, &g);
    c.expect(max_rel_grad_err(P1, g, [&] { return static_cast<double>(mt_consistency_loss(P1, P2)); }) < 1e-4,
             "mt consistency gradient vs finite differences");
  }
  {
    Tensor<double> logits({4});
    for (index_t i = 0; i < 4; ++i) logits[i] = rng.normal(0.0, 1.5);
    Tensor<double> g;
    rotation_loss(logits, 2, &g);
    c.expect(max_rel_grad_err(logits, g, [&] { return static_cast<double>(rotation_loss(logits, 2)); }) < 1e-4,
             "rotation gradient vs finite differences");
  }
  {
    Tensor<double> pred({nvox}), target({nvox});
    for (index_t i = 0; i < nvox; ++i) {
      target[i] = rng.uniform();
      pred[i] = target[i] + (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 0.4);
    }
    Tensor<double> g;
    inpaint_loss(pred, target, &g);
    c.expect(max_rel_grad_err(pred, g, [&] { return static_cast<double>(inpaint_loss(pred, target)); }) < 1e-4,
             "inpaint gradient vs finite differences");
  }
  {
    Tensor<double> P1 = random_prob_rows(nvox, rng), P2 = random_prob_rows(nvox, rng);
    const double t1 = cps_loss(P1, P2).first;
    double worst = 0;
    for (index_t i = 0; i < P2.size(); ++i) {
      const double keep = P2[i];
      const index_t v = i / 2;
      const bool fg = P2[v * 2 + 1] > P2[v * 2];
      const double h = ((i % 2 == 1) == fg) ? 1e-4 : -1e-4;  // never flips the argmax
      P2[i] = keep + h;
      worst = std::max(worst, std::abs(cps_loss(P1, P2).first - t1));
      P2[i] = keep;
    }
    c.expect(worst == 0.0, "cps stop-gradient branch changes term1 by exactly zero");
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 3: EMA matches the geometric closed form after k in {1,5,50}.
// --------------------------------------------------------------------------

Criterion criterion_ema() {
  Criterion c;
  Rng rng(303);
  std::vector<double> theta(256), shadow0(256), grad(256, 0.0);
  for (auto& v : theta) v = rng.normal(0.0, 1.0);
  for (auto& v : shadow0) v = rng.normal(0.0, 1.0);
  std::vector<double> student = theta;
  nn::ParamRegistry<double> reg;
  reg.add("w", student.data(), grad.data(), 256);

  for (double decay : {0.9, 0.99}) {
    for (int k : {1, 5, 50}) {
      EMAState<double> ema;
      ema.decay = decay;
      ema.shadow = {shadow0};
      for (int t = 0; t < k; ++t) ema_update(ema, reg);
      const double dk = std::pow(decay, k);
      double worst = 0;
      for (std::size_t i = 0; i < 256; ++i)
        worst = std::max(worst, std::abs(ema.shadow[0][i] - (dk * shadow0[i] + (1 - dk) * theta[i])));
      char buf[96];
      std::snprintf(buf, sizeof(buf), "EMA closed form decay=%.2f k=%d (err %.3g)", decay, k, worst);
      c.expect(worst < 1e-7, buf);
    }
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 4: architecture contract at the production configuration.
// --------------------------------------------------------------------------

Criterion criterion_architecture() {
  Criterion c;
  EncoderConfig cfg;  // production defaults: 96^3, base 12, heads [3,6,12,24]
  auto a = build_model<float>(cfg, true, true, 1);
  auto b = build_model<float>(cfg, true, true, 2);
  c.expect(a->param_count() == 2265016, "golden parameter count 2265016");
  c.expect(a->param_count() == b->param_count(), "parameter count stable across builds");

  Tensor<float> x({2, 96, 96, 96});
  Rng rng(4);
  for (index_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform());

  auto enc = a->encoder().forward(x, 0, false);
  c.expect(enc.bottleneck_grid == nn::Grid3{3, 3, 3}, "bottleneck grid 3x3x3");
  c.expect(enc.bottleneck.cols() == 192, "bottleneck channels 192 = 12 * 2^4");
  c.expect(enc.bottleneck.rows() == 27, "bottleneck token count 27");

  auto proxy = a->forward_proxy({x}, false);
  c.expect(proxy[0].rot_logits.shape() == std::vector<index_t>{4}, "rotation head emits 4 logits");
  c.expect(proxy[0].projection.shape() == std::vector<index_t>{512}, "projection head emits a 512-d vector");
  c.expect(proxy[0].recon.shape() == x.shape(), "inpainting head reconstructs the input shape");

  auto seg = a->forward_segment({x}, false);
  c.expect(seg[0].shape() == std::vector<index_t>{2, 96, 96, 96},
           "decoder emits 2-class logits at input resolution");
  bool finite = true;
  for (index_t i = 0; i < seg[0].size(); ++i) finite = finite && std::isfinite(seg[0][i]);
  c.expect(finite, "segmentation logits finite");
  return c;
}

// --------------------------------------------------------------------------
// Criterion 5: augmentation invariants over 10,000 fuzzed draws.
// --------------------------------------------------------------------------

Criterion criterion_augmentation() {
  Criterion c;
  Rng rng(505);

  {
    SubVolume<float> sv;
    sv.extent = 6;
    sv.data = Tensor<float>({2, 6, 6, 6});
    for (index_t i = 0; i < sv.data.size(); ++i) sv.data[i] = static_cast<float>(rng.uniform());
    bool ok = true;
    for (int rep = 0; rep < 10000 && ok; ++rep) {
      const int a = static_cast<int>(rng.uniform_int(0, 3));
      const int b = static_cast<int>(rng.uniform_int(0, 3));
      const auto lhs = rotate_subvolume(rotate_subvolume(sv, a), b);
      const auto rhs = rotate_subvolume(sv, (a + b) % 4);
      ok = lhs.data.vec() == rhs.data.vec();
    }
    c.expect(ok, "C4 rotation group law (10k draws)");
  }
  {
    bool ok = true;
    for (int rep = 0; rep < 10000 && ok; ++rep) {
      const auto regions = draw_cutout_regions(rng, 96);
      index_t total = 0;
      for (const auto& r : regions) {
        for (int ax = 0; ax < 3; ++ax)
          ok = ok && r.extent[ax] >= 5 && r.extent[ax] <= 24 && r.origin[ax] >= 0 &&
               r.origin[ax] + r.extent[ax] <= 96;
        total += r.volume();
      }
      ok = ok && total < 265420.8 && !regions.empty();
    }
    c.expect(ok, "cutout edges in [5,24], total volume < 265420 voxels (10k draws)");
  }
  {
    bool ok = true;
    for (int rep = 0; rep < 10000 && ok; ++rep) {
      const auto pts = draw_histogram_points(rng);
      ok = ok && std::abs(piecewise_linear(0.0, pts)) < 1e-12 &&
           std::abs(piecewise_linear(1.0, pts) - 1.0) < 1e-12;
      const double a = rng.uniform(), b = rng.uniform();
      const double lo = std::min(a, b), hi = std::max(a, b);
      ok = ok && piecewise_linear(lo, pts) <= piecewise_linear(hi, pts) + 1e-12;
    }
    c.expect(ok, "histogram shift monotone with pinned endpoints (10k draws)");
  }
  {
    bool ok = true;
    for (int rep = 0; rep < 50 && ok; ++rep) {
      SubVolume<float> sv;
      sv.extent = 32;
      sv.data = Tensor<float>({2, 32, 32, 32});
      for (index_t i = 0; i < sv.data.size(); ++i) sv.data[i] = static_cast<float>(rng.uniform());
      const auto view = augment_view(sv, rng);
      const auto replayed = apply_record(view.record, sv);
      ok = replayed.data.vec() == view.view.data.vec();
    }
    c.expect(ok, "replay from AugmentationRecord is bit-exact");
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 6: sliding-window equivalence on a 168^3 volume.
// --------------------------------------------------------------------------

Criterion criterion_sliding_window() {
  Criterion c;
  Sample<float> s;
  s.subject_id = "grad";
  s.t1 = Volume<float>({168, 168, 168}, Modality::T1w, {0.9, 0.9, 0.9});
  Rng rng(606);
  for (auto& v : s.t1.voxels) v = static_cast<float>(rng.uniform());
  s.flair = s.t1;
  s.flair.modality = Modality::FLAIR;

  auto stub = [](const Tensor<float>& block) {
    Tensor<float> probs(block.shape());
    const index_t nv = block.size() / 2;
    for (index_t v = 0; v < nv; ++v) {
      probs[v] = 1.0f - block[v];
      probs[nv + v] = block[v];  // voxelwise f(x) = x
    }
    return probs;
  };

  InferenceConfig cfg;  // window 96, overlap 24
  Volume<float> weights;
  const Volume<float> out = sliding_window_predict(stub, s, cfg, &weights);

  double worst = 0;
  float wmin = 1e9f;
  for (index_t i = 0; i < out.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(out.voxels[static_cast<std::size_t>(i)]) -
                                     s.t1.voxels[static_cast<std::size_t>(i)]));
    wmin = std::min(wmin, weights.voxels[static_cast<std::size_t>(i)]);
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "tiled output equals direct application (max err %.3g)", worst);
  c.expect(worst < 1e-6, buf);
  c.expect(wmin >= 1.0f, "every voxel covered by at least one window");

  auto constant = [](const Tensor<float>& block) {
    Tensor<float> probs(block.shape());
    const index_t nv = block.size() / 2;
    for (index_t v = 0; v < nv; ++v) {
      probs[v] = 0.25f;
      probs[nv + v] = 0.75f;
    }
    return probs;
  };
  const Volume<float> blended = sliding_window_predict(constant, s, cfg);
  double cworst = 0;
  for (float v : blended.voxels) cworst = std::max(cworst, std::abs(static_cast<double>(v) - 0.75));
  std::snprintf(buf, sizeof(buf), "accumulated blend weights normalize uniformly (max err %.3g)", cworst);
  c.expect(cworst < 1e-6, buf);
  return c;
}

// --------------------------------------------------------------------------
// Criterion 7: desk-scale training behaviour on a 14-phantom corpus, using a
// reduced-size CPU configuration of the same architecture.
// --------------------------------------------------------------------------

struct DeskConfig {
  index_t phantom_extent = 40;
  index_t subvolume = 16;
  double lr = 1e-2;
  double momentum = 0.9;
  int pretrain_steps = 150;
  int finetune_steps_b = 300;  // CPS overfit check
  int finetune_steps_c = 150;  // ordering runs

  EncoderConfig encoder() const {
    EncoderConfig cfg;
    cfg.base_features = 6;
    cfg.n_stages = 3;
    cfg.heads_per_stage = {3, 6, 12};
    cfg.depths_per_stage = {1, 1, 1};
    cfg.proj_dim = 64;
    cfg.dropout_rate = 0.1;
    cfg.input_size = subvolume;
    return cfg;
  }
};

Criterion criterion_desk_scale() {
  Criterion c;
  const DeskConfig dc;
  std::vector<Sample<float>> corpus;
  for (int i = 0; i < 14; ++i) {
    PhantomSpec spec;
    spec.extent = {dc.phantom_extent, dc.phantom_extent, dc.phantom_extent};
    spec.n_lesions = {3, 6};
    spec.lesion_radius = {2.0, 4.0};
    spec.seed = 9000 + static_cast<std::uint64_t>(i);
    corpus.push_back(generate_phantom<float>(spec));
  }

  InferenceConfig icfg;
  icfg.window = dc.subvolume;
  icfg.overlap = dc.subvolume / 4;

  // budget 3 of the 12 training subjects; 9 re-pooled as unlabeled; 2 held out
  std::vector<const Sample<float>*> labeled, unlabeled, test;
  for (int i = 0; i < 3; ++i) labeled.push_back(&corpus[static_cast<std::size_t>(i)]);
  for (int i = 3; i < 12; ++i) unlabeled.push_back(&corpus[static_cast<std::size_t>(i)]);
  for (int i = 12; i < 14; ++i) test.push_back(&corpus[static_cast<std::size_t>(i)]);

  // (a) pre-training improves the held-out inpainting L1
  std::vector<Sample<float>> pre_corpus(corpus.begin(), corpus.begin() + 12);
  PretrainConfig pcfg;
  pcfg.encoder = dc.encoder();
  pcfg.subvolume_size = dc.subvolume;
  pcfg.learning_rate = dc.lr;
  pcfg.momentum = dc.momentum;
  pcfg.max_steps = dc.pretrain_steps;
  pcfg.eval_every = 50;
  pcfg.patience = 10;
  pcfg.seed = 7;
  const std::string ckpt = (fs::temp_directory_path() / "ssl2_acceptance_pretrain.ckpt").string();
  const PretrainReport prep = run_pretraining(pre_corpus, pcfg, ckpt);
  long finite_steps = 0;
  bool all_finite = true;
  for (const auto& s : prep.steps) {
    all_finite = all_finite && std::isfinite(s.total) && std::isfinite(s.rot) &&
                 std::isfinite(s.inpaint) && std::isfinite(s.contrast);
    ++finite_steps;
  }
  {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "pretraining improves eval L1 (step0 %.4f -> best %.4f @%d)",
                  prep.eval_l1[0].second, prep.best_l1, prep.best_step);
    c.expect(prep.best_l1 < prep.eval_l1[0].second && prep.best_step > 0, buf);
    std::printf("    pretrain eval L1: step0 %.4f, best %.4f at step %d\n", prep.eval_l1[0].second,
                prep.best_l1, prep.best_step);
  }

  // (b) CPS with 3 labeled phantoms overfits its training set past 0.8 Dice
  {
    FinetuneConfig cfg;
    cfg.strategy = Strategy::Cps;
    cfg.encoder = dc.encoder();
    cfg.subvolume_size = dc.subvolume;
    cfg.learning_rate = dc.lr;
    cfg.momentum = dc.momentum;
    cfg.max_steps = dc.finetune_steps_b;
    cfg.seed = 11;
    auto result = run_finetune<float>(labeled, unlabeled, cfg);
    for (const auto& s : result.report.steps) {
      all_finite = all_finite && std::isfinite(s.total1) && std::isfinite(s.total2);
      ++finite_steps;
    }
    double train_dice = 0;
    for (const auto* s : labeled) train_dice += evaluate_dice(result.inference_model(), *s, icfg);
    train_dice /= static_cast<double>(labeled.size());
    char buf[96];
    std::snprintf(buf, sizeof(buf), "CPS training-set Dice %.4f > 0.8", train_dice);
    std::printf("    CPS training-set Dice: %.4f\n", train_dice);
    c.expect(train_dice > 0.8, buf);
  }

  // (c) held-out ordering cps+pretrain >= cps >= fully supervised, majority of 3 seeds
  {
    int ordered = 0;
    for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
      auto run_one = [&](Strategy strategy, bool pre) {
        FinetuneConfig cfg;
        cfg.strategy = strategy;
        cfg.encoder = dc.encoder();
        cfg.subvolume_size = dc.subvolume;
        cfg.learning_rate = dc.lr;
        cfg.momentum = dc.momentum;
        cfg.max_steps = dc.finetune_steps_c;
        cfg.seed = seed;
        if (pre) cfg.init_checkpoint = ckpt;
        auto result = run_finetune<float>(labeled, unlabeled, cfg);
        for (const auto& st : result.report.steps) {
          all_finite = all_finite && std::isfinite(st.total1) && std::isfinite(st.total2);
          ++finite_steps;
        }
        double dice = 0;
        for (const auto* s : test) dice += evaluate_dice(result.inference_model(), *s, icfg);
        return dice / static_cast<double>(test.size());
      };
      const double fs = run_one(Strategy::FullySupervised, false);
      const double cps = run_one(Strategy::Cps, false);
      const double cps_pre = run_one(Strategy::Cps, true);
      std::printf("    seed %llu: fully_supervised %.4f, cps %.4f, cps+pretrain %.4f\n",
                  static_cast<unsigned long long>(seed), fs, cps, cps_pre);
      std::fflush(stdout);
      if (cps_pre >= cps && cps >= fs) ++ordered;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "ordering cps+pre >= cps >= supervised holds in %d/3 seeds", ordered);
    c.expect(ordered >= 2, buf);
  }
  {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "all %ld recorded step losses are finite", finite_steps);
    c.expect(all_finite && finite_steps > 1000, buf);
  }
  std::remove(ckpt.c_str());
  return c;
}

// --------------------------------------------------------------------------
// Criterion 8: sparse-slice mechanics.
// --------------------------------------------------------------------------

Criterion criterion_sparse_slices() {
  Criterion c;
  {
    const auto sel = select_labeled_slices(200, 0.2, 17, "subject_x");
    c.expect(std::count(sel.begin(), sel.end(), 1) == 40, "level 0.2 on 200 slices labels exactly 40");
    const auto again = select_labeled_slices(200, 0.2, 17, "subject_x");
    c.expect(sel == again, "slice selection deterministic per (seed, subject)");
  }

  Rng rng(808);
  const index_t S = 8;
  const index_t nvox = S * S * S;
  Tensor<double> P = random_prob_rows(nvox, rng);
  std::vector<std::uint8_t> Y(static_cast<std::size_t>(nvox));
  for (auto& y : Y) y = rng.bernoulli(0.4);

  {
    std::vector<std::uint8_t> all(static_cast<std::size_t>(S), 1);
    c.expect_near(masked_supervised_loss(P, Y, all, S), dice_ce_loss(P, Y), 1e-9,
                  "full slice mask equals unmasked loss");
  }
  {
    std::vector<std::uint8_t> half(static_cast<std::size_t>(S), 0);
    for (index_t z = 0; z < S / 2; ++z) half[static_cast<std::size_t>(z)] = 1;
    Tensor<double> dP;
    masked_supervised_loss(P, Y, half, S, &dP);
    double off_mask = 0;
    for (index_t v = 0; v < nvox; ++v)
      if (!half[static_cast<std::size_t>(v % S)])
        off_mask += std::abs(dP[v * 2]) + std::abs(dP[v * 2 + 1]);
    c.expect(off_mask == 0.0, "unlabeled-slice voxels receive exactly zero gradient");

    Tensor<double> dlogits;
    softmax_backward_rows(P, dP, dlogits);
    double off_logits = 0;
    for (index_t v = 0; v < nvox; ++v)
      if (!half[static_cast<std::size_t>(v % S)])
        off_logits += std::abs(dlogits[v * 2]) + std::abs(dlogits[v * 2 + 1]);
    c.expect(off_logits == 0.0, "unlabeled-slice voxels receive zero logits gradient");
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 9: experiment harness and end-to-end pipeline.
// --------------------------------------------------------------------------

Criterion criterion_harness() {
  Criterion c;
  {
    Dataset data;
    for (int i = 0; i < 14; ++i) {
      PhantomSpec spec;
      spec.extent = {24, 24, 24};
      spec.lesion_radius = {2.0, 3.5};
      spec.seed = 9900 + static_cast<std::uint64_t>(i);
      data.labeled.push_back(generate_phantom<float>(spec));
    }
    for (int i = 0; i < 2; ++i) {
      PhantomSpec spec;
      spec.extent = {24, 24, 24};
      spec.seed = 9950 + static_cast<std::uint64_t>(i);
      auto s = generate_phantom<float>(spec);
      s.labeled = false;
      s.lesion_mask.reset();
      data.unlabeled.push_back(std::move(s));
    }

    ExperimentSpec spec;
    spec.protocol = Protocol::CrossVal;
    spec.folds = 7;
    spec.seed = 5;
    spec.train.encoder.base_features = 4;
    spec.train.encoder.n_stages = 2;
    spec.train.encoder.heads_per_stage = {2, 4};
    spec.train.encoder.depths_per_stage = {1, 1};
    spec.train.encoder.proj_dim = 8;
    spec.train.encoder.input_size = 16;
    spec.train.subvolume_size = 16;
    spec.train.max_steps = 3;
    spec.train.learning_rate = 1e-3;
    spec.inference.window = 16;
    spec.inference.overlap = 4;

    const std::vector<MethodSpec> methods{{Strategy::FullySupervised, false}, {Strategy::Cps, false}};
    const ResultsTable table = run_crossval(data, methods, 7, spec);
    c.expect(table.methods.size() == 2 && table.settings.size() == 7,
             "crossval table is 2 methods x 7 folds");
    bool in_range = true;
    for (const auto& row : table.values)
      for (const auto& cell : row)
        for (double v : cell) in_range = in_range && v >= 0.0 && v <= 1.0;
    c.expect(in_range, "every Dice cell lies in [0,1]");

    const std::string csv = (fs::temp_directory_path() / "ssl2_acceptance_crossval.csv").string();
    write_results_csv(csv, table);
    std::ifstream f(csv);
    std::string line;
    std::getline(f, line);
    bool match = true;
    for (std::size_t r = 0; r < table.methods.size(); ++r) {
      std::getline(f, line);
      std::stringstream ss(line);
      std::vector<std::string> cells;
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      double mean = 0;
      for (std::size_t k = 0; k < 7; ++k) mean += table.values[r][k][0];
      mean /= 7.0;
      double var = 0;
      for (std::size_t k = 0; k < 7; ++k)
        var += (table.values[r][k][0] - mean) * (table.values[r][k][0] - mean);
      const double sd = std::sqrt(var / 7.0);
      match = match && std::abs(std::stod(cells[cells.size() - 2]) - mean) < 1e-9;
      match = match && std::abs(std::stod(cells[cells.size() - 1]) - sd) < 1e-9;
      for (std::size_t k = 0; k < 7; ++k)
        match = match && std::abs(std::stod(cells[k + 1]) - table.values[r][k][0]) < 1e-9;
    }
    c.expect(match, "csv per-fold cells and avg/std agree with recomputation to 1e-9");
    std::remove(csv.c_str());
  }

  {
    const char* cli = std::getenv("SSL2_CLI");
    if (!cli) {
      c.expect(false, "SSL2_CLI not set; cannot run the pipeline");
      return c;
    }
    const fs::path dir = fs::temp_directory_path() / "ssl2_acceptance_pipeline";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string corpus = (dir / "corpus").string();
    const std::string model_flags =
        " --base-features 4 --stages 2 --heads0 2 --depth 1 --subvolume 16 --proj-dim 8";
    auto sh = [&](const std::string& cmd) {
      const std::string full =
          std::string(cli) + " " + cmd + " >> " + (dir / "log.txt").string() + " 2>&1";
      return std::system(full.c_str());
    };
    int rc = sh("phantom --out " + corpus + " --count 8 --extent 24 --labeled 6 --seed 77");
    rc = rc ? rc : sh("pretrain --manifest " + corpus + "/manifest.json --out " + (dir / "pre").string() +
                      " --steps 4 --eval-every 2 --seed 77" + model_flags);
    rc = rc ? rc : sh("experiment --manifest " + corpus + "/manifest.json --out " + (dir / "exp").string() +
                      " --protocol train_size --folds 2 --budgets 2 --steps 2 --seed 77 --overlap 4" +
                      " --methods fully_supervised,cps,cps+pretrain --pretrained " +
                      (dir / "pre" / "pretrain_best.ckpt").string() + model_flags);
    rc = rc ? rc : sh("report --results " + (dir / "exp").string());
    c.expect(rc == 0, "pipeline phantom -> pretrain -> experiment -> report exits 0");
    c.expect(fs::exists(dir / "exp" / "results_train_size.csv"), "experiment wrote its results table");
    c.expect(fs::exists(dir / "exp" / "summary.md"), "report wrote its summary");
    if (c.failures == 0) fs::remove_all(dir);
  }
  return c;
}

}  // namespace

int main() {
  struct Entry {
    const char* label;
    Criterion (*fn)();
  };
  const Entry entries[] = {
      {"1 loss-oracle suite (1e-6, 100+ instances per loss)", criterion_loss_oracles},
      {"2 gradient checks (1e-4 relative; CPS stop-gradient exact)", criterion_gradients},
      {"3 EMA closed-form analytics (1e-7)", criterion_ema},
      {"4 architecture contract (192 x 3^3 bottleneck, head dims, golden params)",
       criterion_architecture},
      {"5 augmentation invariants (10k fuzzed draws, replay bit-exact)", criterion_augmentation},
      {"6 sliding-window equivalence on 168^3 (1e-6)", criterion_sliding_window},
      {"7 desk-scale training behaviour (14-phantom corpus)", criterion_desk_scale},
      {"8 sparse-slice mechanics (40/200 slices, masked-loss identities)", criterion_sparse_slices},
      {"9 experiment harness and end-to-end pipeline", criterion_harness},
  };

  int failed = 0;
  for (const auto& e : entries) {
    const auto t0 = std::chrono::steady_clock::now();
    Criterion c = e.fn();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %s (%.1fs)\n", c.failures == 0 ? "PASS" : "FAIL", e.label, secs);
    for (const auto& note : c.notes) std::printf("       - %s\n", note.c_str());
    std::fflush(stdout);
    failed += c.failures != 0;
  }
  std::printf("%d/9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
