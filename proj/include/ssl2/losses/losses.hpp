#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "ssl2/core/errors.hpp"
#include "ssl2/core/tensor.hpp"

namespace ssl2 {

// Losses are pure functions over probability/logit arrays. Each takes an
// optional output tensor for the analytic gradient with respect to the
// differentiated argument; pseudo-label and teacher arguments are constants
// (stop-gradient), so no gradient is ever produced for them.
//
// Reduction conventions: voxel means throughout, with per-voxel channel sums
// for squared-error consistency terms.

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kLogFloor = 1e-12;

template <typename Scalar>
Scalar safe_log(Scalar p) {
  return std::log(std::max(p, static_cast<Scalar>(kLogFloor)));
}

// ---------------------------------------------------------------------------
// Softmax plumbing shared by model heads and trainers.
// ---------------------------------------------------------------------------

template <typename Scalar>
void softmax_rows(const Tensor<Scalar>& logits, Tensor<Scalar>& probs) {
  probs = logits;
  const index_t c = logits.shape().back();
  const index_t n = logits.size() / c;
  for (index_t i = 0; i < n; ++i) {
    Scalar* row = probs.data() + i * c;
    Scalar mx = row[0];
    for (index_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    Scalar sum = 0;
    for (index_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (index_t j = 0; j < c; ++j) row[j] /= sum;
  }
}

// dZ = P .* (dP - sum_c(dP .* P)) rowwise, the softmax Jacobian product.
template <typename Scalar>
void softmax_backward_rows(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs,
                           Tensor<Scalar>& dlogits) {
  dlogits = dprobs;
  const index_t c = probs.shape().back();
  const index_t n = probs.size() / c;
  for (index_t i = 0; i < n; ++i) {
    const Scalar* p = probs.data() + i * c;
    const Scalar* dp = dprobs.data() + i * c;
    Scalar* dz = dlogits.data() + i * c;
    Scalar dot = 0;
    for (index_t j = 0; j < c; ++j) dot += dp[j] * p[j];
    for (index_t j = 0; j < c; ++j) dz[j] = p[j] * (dp[j] - dot);
  }
}

template <typename Scalar>
std::vector<std::uint8_t> argmax_rows(const Tensor<Scalar>& probs) {
  const index_t c = probs.shape().back();
  const index_t n = probs.size() / c;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n));
  for (index_t i = 0; i < n; ++i) {
    const Scalar* row = probs.data() + i * c;
    index_t best = 0;
    for (index_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Supervised loss: soft Dice + voxel-mean cross entropy, optionally masked.
// P: {n, 2} foreground probabilities in column 1; Y: n binary labels.
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar dice_ce_loss(const Tensor<Scalar>& P, const std::vector<std::uint8_t>& Y,
                    const std::vector<std::uint8_t>& slice_mask = {},
                    Tensor<Scalar>* dP = nullptr) {
  const index_t n = P.dim(0);
  if (P.rank() != 2 || P.dim(1) != 2) throw ShapeMismatch("dice_ce_loss: P must be {n,2}");
  if (static_cast<index_t>(Y.size()) != n) throw ShapeMismatch("dice_ce_loss: |Y| != n");
  if (!slice_mask.empty() && static_cast<index_t>(slice_mask.size()) != n)
    throw ShapeMismatch("dice_ce_loss: |mask| != n");

  auto active = [&](index_t i) { return slice_mask.empty() || slice_mask[static_cast<std::size_t>(i)] != 0; };

  index_t m = 0;
  double inter = 0, sum_p = 0, sum_y = 0;
  for (index_t i = 0; i < n; ++i) {
    if (!active(i)) continue;
    ++m;
    const double p1 = P[i * 2 + 1];
    const double y = Y[static_cast<std::size_t>(i)];
    inter += p1 * y;
    sum_p += p1;
    sum_y += y;
  }
  if (m == 0) throw EmptyMask("dice_ce_loss: slice mask selects zero voxels");

  const double num = 2.0 * inter + kDiceSmooth;
  const double den = sum_p + sum_y + kDiceSmooth;
  const double dice = 1.0 - num / den;

  double ce = 0;
  for (index_t i = 0; i < n; ++i) {
    if (!active(i)) continue;
    const int y = Y[static_cast<std::size_t>(i)];
    ce -= safe_log(static_cast<double>(P[i * 2 + y]));
  }
  ce /= static_cast<double>(m);

  if (dP) {
    *dP = Tensor<Scalar>(P.shape());
    for (index_t i = 0; i < n; ++i) {
      if (!active(i)) continue;
      const double y = Y[static_cast<std::size_t>(i)];
      // dice term touches only the foreground channel
      double g1 = (num - 2.0 * y * den) / (den * den);
      // cross-entropy term touches the labeled channel
      const int yi = Y[static_cast<std::size_t>(i)];
      const double p = P[i * 2 + yi];
      const double gce = p > kLogFloor ? -1.0 / (p * static_cast<double>(m)) : 0.0;
      (*dP)[i * 2 + 1] = static_cast<Scalar>(g1 + (yi == 1 ? gce : 0.0));
      (*dP)[i * 2 + 0] = static_cast<Scalar>(yi == 0 ? gce : 0.0);
    }
  }
  return static_cast<Scalar>(dice + ce);
}

// ---------------------------------------------------------------------------
// Proxy task 1: rotation prediction, cross entropy of softmax(logits).
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar rotation_loss(const Tensor<Scalar>& logits, int r, Tensor<Scalar>* dlogits = nullptr) {
  if (logits.size() != 4) throw ShapeMismatch("rotation_loss: expected 4 logits");
  if (r < 0 || r > 3) throw ConfigError("rotation_loss: class out of range");
  Tensor<Scalar> probs;
  softmax_rows(logits, probs);
  const Scalar loss = -safe_log(probs[r]);
  if (dlogits) {
    *dlogits = probs;
    (*dlogits)[r] -= Scalar(1);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Proxy task 2: inpainting reconstruction, mean absolute error.
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar inpaint_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                    Tensor<Scalar>* dpred = nullptr) {
  if (!pred.same_shape(target)) throw ShapeMismatch("inpaint_loss: shape mismatch");
  const index_t n = pred.size();
  double acc = 0;
  for (index_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pred[i] - target[i]));
  if (dpred) {
    *dpred = Tensor<Scalar>(pred.shape());
    const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
    for (index_t i = 0; i < n; ++i) {
      const Scalar d = pred[i] - target[i];
      (*dpred)[i] = d > 0 ? inv : (d < 0 ? -inv : Scalar(0));
    }
  }
  return static_cast<Scalar>(acc / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Proxy task 3: contrastive loss over 2N projection vectors.
//
// For each subject i and anchor view a, the positive is the subject's other
// view and the denominator runs over the views of all other subjects only:
//   -log( exp(sim(v_ia, v_i,other)/t) / sum_{k != i} sum_{j=1,2} exp(sim(v_ia, v_kj)/t) )
// averaged over all 2N anchors.
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar contrastive_loss(const Tensor<Scalar>& V, const std::vector<int>& subject_of,
                        const std::vector<int>& view_of, Scalar temperature,
                        Tensor<Scalar>* dV = nullptr) {
  (void)view_of;
  const index_t m = V.dim(0);  // 2N views
  const index_t d = V.dim(1);
  if (m < 4 || m % 2 != 0) throw BatchTooSmall("contrastive_loss: need 2N views with N >= 2");
  if (static_cast<index_t>(subject_of.size()) != m) throw ShapeMismatch("contrastive_loss: subject_of size");
  if (!(temperature > 0)) throw ConfigError("contrastive_loss: temperature must be > 0");

  auto row = [&](index_t i) { return ConstVecMap<Scalar>(V.data() + i * d, d); };

  std::vector<double> norms(static_cast<std::size_t>(m));
  for (index_t i = 0; i < m; ++i) {
    norms[static_cast<std::size_t>(i)] = row(i).template cast<double>().norm();
    if (norms[static_cast<std::size_t>(i)] <= 0) throw ZeroVector("contrastive_loss: zero projection vector");
  }

  MatrixX<double> S(m, m);  // cosine similarities
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < m; ++j)
      S(i, j) = row(i).template cast<double>().dot(row(j).template cast<double>()) /
                (norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)]);

  auto positive_of = [&](index_t a) {
    for (index_t b = 0; b < m; ++b)
      if (b != a && subject_of[static_cast<std::size_t>(b)] == subject_of[static_cast<std::size_t>(a)])
        return b;
    throw ShapeMismatch("contrastive_loss: subject without a second view");
  };

  const double t = static_cast<double>(temperature);
  double total = 0;
  MatrixX<double> G = MatrixX<double>::Zero(m, m);  // d loss / d S(a,b)

  for (index_t a = 0; a < m; ++a) {
    const index_t p = positive_of(a);
    // log-sum-exp over negatives
    double mx = -1e300;
    for (index_t b = 0; b < m; ++b)
      if (subject_of[static_cast<std::size_t>(b)] != subject_of[static_cast<std::size_t>(a)])
        mx = std::max(mx, S(a, b) / t);
    double z = 0;
    for (index_t b = 0; b < m; ++b)
      if (subject_of[static_cast<std::size_t>(b)] != subject_of[static_cast<std::size_t>(a)])
        z += std::exp(S(a, b) / t - mx);
    const double lse = mx + std::log(z);
    total += -S(a, p) / t + lse;

    if (dV) {
      G(a, p) += -1.0 / t;
      for (index_t b = 0; b < m; ++b)
        if (subject_of[static_cast<std::size_t>(b)] != subject_of[static_cast<std::size_t>(a)])
          G(a, b) += std::exp(S(a, b) / t - lse) / t;
    }
  }
  total /= static_cast<double>(m);

  if (dV) {
    G /= static_cast<double>(m);
    *dV = Tensor<Scalar>(V.shape());
    for (index_t i = 0; i < m; ++i) {
      VectorX<double> gi = VectorX<double>::Zero(d);
      const VectorX<double> vi = row(i).template cast<double>();
      for (index_t j = 0; j < m; ++j) {
        const double g = G(i, j) + G(j, i);
        if (g == 0 || j == i) continue;
        const VectorX<double> vj = row(j).template cast<double>();
        const double ni = norms[static_cast<std::size_t>(i)], nj = norms[static_cast<std::size_t>(j)];
        gi += g * (vj / (ni * nj) - S(i, j) * vi / (ni * ni));
      }
      // diagonal terms are constant (sim(i,i) == 1), no gradient
      for (index_t k = 0; k < d; ++k) (*dV)[i * d + k] = static_cast<Scalar>(gi[k]);
    }
  }
  return static_cast<Scalar>(total);
}

// ---------------------------------------------------------------------------
// Weighted pre-training sum.
// ---------------------------------------------------------------------------

struct PretrainLossWeights {
  double lambda_rot = 1.0;
  double lambda_inpaint = 1.0;
  double lambda_contrast = 1.0;
  double temperature_t = 0.5;

  void validate() const {
    if (lambda_rot < 0 || lambda_inpaint < 0 || lambda_contrast < 0)
      throw ConfigError("pretrain loss weights must be >= 0");
    if (!(temperature_t > 0)) throw ConfigError("temperature_t must be > 0");
  }
};

template <typename Scalar>
Scalar pretrain_loss(Scalar rot, Scalar inpaint, Scalar contrast, const PretrainLossWeights& w) {
  return static_cast<Scalar>(w.lambda_rot * rot + w.lambda_inpaint * inpaint +
                             w.lambda_contrast * contrast);
}

// ---------------------------------------------------------------------------
// Semi-supervised unsupervised terms. P tensors are {n, C} probability rows;
// the differentiated argument is always the student's.
// ---------------------------------------------------------------------------

// Mean Teacher: voxel-mean of the per-voxel squared probability difference.
template <typename Scalar>
Scalar mt_consistency_loss(const Tensor<Scalar>& P_student, const Tensor<Scalar>& P_teacher,
                           Tensor<Scalar>* dP_student = nullptr) {
  if (!P_student.same_shape(P_teacher)) throw ShapeMismatch("mt_consistency_loss: shape mismatch");
  const index_t c = P_student.shape().back();
  const index_t n = P_student.size() / c;
  double acc = 0;
  for (index_t i = 0; i < P_student.size(); ++i) {
    const double e = P_student[i] - P_teacher[i];
    acc += e * e;
  }
  if (dP_student) {
    *dP_student = Tensor<Scalar>(P_student.shape());
    const Scalar k = Scalar(2) / static_cast<Scalar>(n);
    for (index_t i = 0; i < P_student.size(); ++i)
      (*dP_student)[i] = k * (P_student[i] - P_teacher[i]);
  }
  return static_cast<Scalar>(acc / static_cast<double>(n));
}

// CPS: cross-entropy of each network's probabilities against the argmax
// pseudo-labels of the other. Pseudo-labels are constants; gradients flow
// only through the supervised probability argument of each term.
template <typename Scalar>
std::pair<Scalar, Scalar> cps_loss(const Tensor<Scalar>& P1, const Tensor<Scalar>& P2,
                                   Tensor<Scalar>* dP1 = nullptr, Tensor<Scalar>* dP2 = nullptr) {
  if (!P1.same_shape(P2)) throw ShapeMismatch("cps_loss: shape mismatch");
  const index_t c = P1.shape().back();
  const index_t n = P1.size() / c;
  const std::vector<std::uint8_t> L1 = argmax_rows(P1);
  const std::vector<std::uint8_t> L2 = argmax_rows(P2);

  auto ce_against = [&](const Tensor<Scalar>& P, const std::vector<std::uint8_t>& L,
                        Tensor<Scalar>* dP) {
    double acc = 0;
    if (dP) *dP = Tensor<Scalar>(P.shape());
    for (index_t i = 0; i < n; ++i) {
      const index_t k = L[static_cast<std::size_t>(i)];
      const double p = P[i * c + k];
      acc -= safe_log(p);
      if (dP && p > kLogFloor)
        (*dP)[i * c + k] = static_cast<Scalar>(-1.0 / (p * static_cast<double>(n)));
    }
    return static_cast<Scalar>(acc / static_cast<double>(n));
  };

  const Scalar term1 = ce_against(P1, L2, dP1);  // L2 supervises P1
  const Scalar term2 = ce_against(P2, L1, dP2);  // L1 supervises P2
  return {term1, term2};
}

// Entropy minimization: voxel-mean Shannon entropy.
template <typename Scalar>
Scalar entropy_min_loss(const Tensor<Scalar>& P, Tensor<Scalar>* dP = nullptr) {
  const index_t c = P.shape().back();
  const index_t n = P.size() / c;
  double acc = 0;
  if (dP) *dP = Tensor<Scalar>(P.shape());
  for (index_t i = 0; i < P.size(); ++i) {
    const double p = P[i];
    const double lp = safe_log(p);
    acc -= p * lp;
    if (dP) (*dP)[i] = static_cast<Scalar>(-(lp + 1.0) / static_cast<double>(n));
  }
  return static_cast<Scalar>(acc / static_cast<double>(n));
}

// FixMatch: confidence-masked cross-entropy of the strong view against the
// weak view's argmax. Returns 0 when no voxel is confident.
template <typename Scalar>
Scalar fixmatch_loss(const Tensor<Scalar>& P_weak, const Tensor<Scalar>& P_strong, Scalar tau,
                     Tensor<Scalar>* dP_strong = nullptr) {
  if (!P_weak.same_shape(P_strong)) throw ShapeMismatch("fixmatch_loss: shape mismatch");
  if (!(tau > 0 && tau < 1)) throw ConfigError("fixmatch_loss: tau must be in (0,1)");
  const index_t c = P_weak.shape().back();
  const index_t n = P_weak.size() / c;
  if (dP_strong) *dP_strong = Tensor<Scalar>(P_strong.shape());

  index_t m = 0;
  std::vector<index_t> pick(static_cast<std::size_t>(n), -1);
  for (index_t i = 0; i < n; ++i) {
    const Scalar* row = P_weak.data() + i * c;
    index_t best = 0;
    for (index_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    if (row[best] >= tau) {
      pick[static_cast<std::size_t>(i)] = best;
      ++m;
    }
  }
  if (m == 0) return Scalar(0);

  double acc = 0;
  for (index_t i = 0; i < n; ++i) {
    const index_t k = pick[static_cast<std::size_t>(i)];
    if (k < 0) continue;
    const double p = P_strong[i * c + k];
    acc -= safe_log(p);
    if (dP_strong && p > kLogFloor)
      (*dP_strong)[i * c + k] = static_cast<Scalar>(-1.0 / (p * static_cast<double>(m)));
  }
  return static_cast<Scalar>(acc / static_cast<double>(m));
}

// Non-saturating adversarial terms over discriminator scores in (0,1).
// gen pushes unlabeled predictions toward "labeled-like"; disc separates
// the two pools.
template <typename Scalar>
std::pair<Scalar, Scalar> adversarial_loss(const Tensor<Scalar>& D_labeled,
                                           const Tensor<Scalar>& D_unlabeled,
                                           Tensor<Scalar>* d_gen_unlabeled = nullptr,
                                           Tensor<Scalar>* d_disc_labeled = nullptr,
                                           Tensor<Scalar>* d_disc_unlabeled = nullptr) {
  const index_t nl = D_labeled.size(), nu = D_unlabeled.size();
  if (nl == 0 || nu == 0) throw ShapeMismatch("adversarial_loss: empty score vector");

  double gen = 0, disc_l = 0, disc_u = 0;
  for (index_t i = 0; i < nu; ++i) gen -= safe_log(static_cast<double>(D_unlabeled[i]));
  for (index_t i = 0; i < nl; ++i) disc_l -= safe_log(static_cast<double>(D_labeled[i]));
  for (index_t i = 0; i < nu; ++i) disc_u -= safe_log(1.0 - static_cast<double>(D_unlabeled[i]));
  gen /= static_cast<double>(nu);
  const double disc = 0.5 * (disc_l / static_cast<double>(nl) + disc_u / static_cast<double>(nu));

  if (d_gen_unlabeled) {
    *d_gen_unlabeled = Tensor<Scalar>(D_unlabeled.shape());
    for (index_t i = 0; i < nu; ++i)
      (*d_gen_unlabeled)[i] = static_cast<Scalar>(-1.0 / (std::max(static_cast<double>(D_unlabeled[i]), kLogFloor) * nu));
  }
  if (d_disc_labeled) {
    *d_disc_labeled = Tensor<Scalar>(D_labeled.shape());
    for (index_t i = 0; i < nl; ++i)
      (*d_disc_labeled)[i] = static_cast<Scalar>(-0.5 / (std::max(static_cast<double>(D_labeled[i]), kLogFloor) * nl));
  }
  if (d_disc_unlabeled) {
    *d_disc_unlabeled = Tensor<Scalar>(D_unlabeled.shape());
    for (index_t i = 0; i < nu; ++i)
      (*d_disc_unlabeled)[i] = static_cast<Scalar>(0.5 / (std::max(1.0 - static_cast<double>(D_unlabeled[i]), kLogFloor) * nu));
  }
  return {static_cast<Scalar>(gen), static_cast<Scalar>(disc)};
}

// Uncertainty-aware Mean Teacher: squared-difference consistency restricted
// to voxels whose predictive entropy is below the threshold.
template <typename Scalar>
Scalar uamt_consistency_loss(const Tensor<Scalar>& P_student, const Tensor<Scalar>& P_teacher,
                             const std::vector<Scalar>& uncertainty, Scalar H_thresh,
                             Tensor<Scalar>* dP_student = nullptr) {
  if (!P_student.same_shape(P_teacher)) throw ShapeMismatch("uamt_consistency_loss: shape mismatch");
  const index_t c = P_student.shape().back();
  const index_t n = P_student.size() / c;
  if (static_cast<index_t>(uncertainty.size()) != n)
    throw ShapeMismatch("uamt_consistency_loss: uncertainty size");

  index_t m = 0;
  for (index_t i = 0; i < n; ++i)
    if (uncertainty[static_cast<std::size_t>(i)] < H_thresh) ++m;
  if (dP_student) *dP_student = Tensor<Scalar>(P_student.shape());
  if (m == 0) return Scalar(0);

  double acc = 0;
  for (index_t i = 0; i < n; ++i) {
    if (!(uncertainty[static_cast<std::size_t>(i)] < H_thresh)) continue;
    for (index_t j = 0; j < c; ++j) {
      const double e = P_student[i * c + j] - P_teacher[i * c + j];
      acc += e * e;
      if (dP_student)
        (*dP_student)[i * c + j] = static_cast<Scalar>(2.0 * e / static_cast<double>(m));
    }
  }
  return static_cast<Scalar>(acc / static_cast<double>(m));
}

}  // namespace ssl2
