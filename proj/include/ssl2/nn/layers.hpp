#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ssl2/core/errors.hpp"
#include "ssl2/core/rng.hpp"
#include "ssl2/core/tensor.hpp"

namespace ssl2::nn {

// Layer-wise manual backprop. Each layer caches what it needs for the
// backward pass per batch slot; eval-mode forwards cache nothing. Parameter
// gradients accumulate until zero_grad.

template <typename Scalar>
struct ParamRegistry {
  struct Entry {
    std::string name;
    Scalar* value;
    Scalar* grad;
    index_t size;
  };
  std::vector<Entry> entries;

  void add(const std::string& name, Scalar* v, Scalar* g, index_t n) {
    entries.push_back({name, v, g, n});
  }
  index_t total() const {
    index_t t = 0;
    for (const auto& e : entries) t += e.size;
    return t;
  }
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries) h = hash_values(e.value, e.size, h);
    return h;
  }
  void zero_grads() {
    for (auto& e : entries)
      std::fill(e.grad, e.grad + e.size, Scalar(0));
  }
};

template <typename Scalar>
class Module {
 public:
  virtual ~Module() = default;
  virtual void register_params(ParamRegistry<Scalar>&, const std::string&) {}
  virtual void set_slots(int) {}
  virtual void init(Rng&) {}
  virtual void set_dropout_rng(Rng*) {}
};

template <typename Scalar>
Scalar trunc_normal(Rng& rng, double sigma) {
  double v;
  do {
    v = rng.normal(0.0, sigma);
  } while (std::abs(v) > 2.0 * sigma);
  return static_cast<Scalar>(v);
}

// ---------------------------------------------------------------------------
// Dense: Y = X W^T + b over token rows.
// ---------------------------------------------------------------------------

template <typename Scalar>
class Dense : public Module<Scalar> {
 public:
  Dense(index_t in, index_t out, bool bias = true)
      : in_(in), out_(out), has_bias_(bias), W(out, in), gW(out, in), b(bias ? out : 0), gb(bias ? out : 0) {
    gW.setZero();
    gb.setZero();
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    r.add(p + ".weight", W.data(), gW.data(), W.size());
    if (has_bias_) r.add(p + ".bias", b.data(), gb.data(), b.size());
  }
  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }
  void init(Rng& rng) override {
    for (index_t i = 0; i < W.size(); ++i) W.data()[i] = trunc_normal<Scalar>(rng, 0.02);
    b.setZero();
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, int slot, bool train) {
    MatrixX<Scalar> Y = X * W.transpose();
    if (has_bias_) Y.rowwise() += b.transpose();
    if (train) cache_.at(static_cast<std::size_t>(slot)) = X;
    return Y;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    const MatrixX<Scalar>& X = cache_.at(static_cast<std::size_t>(slot));
    gW.noalias() += dY.transpose() * X;
    if (has_bias_) gb.noalias() += dY.colwise().sum().transpose();
    return dY * W;
  }

  index_t in_, out_;
  bool has_bias_;
  MatrixX<Scalar> W, gW;
  VectorX<Scalar> b, gb;

 private:
  std::vector<MatrixX<Scalar>> cache_;
};

// ---------------------------------------------------------------------------
// LayerNorm over the last (channel) axis of token rows.
// ---------------------------------------------------------------------------

template <typename Scalar>
class LayerNorm : public Module<Scalar> {
 public:
  explicit LayerNorm(index_t dim, double eps = 1e-5)
      : dim_(dim), eps_(eps), gamma(dim), beta(dim), ggamma(dim), gbeta(dim) {
    gamma.setOnes();
    beta.setZero();
    ggamma.setZero();
    gbeta.setZero();
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    r.add(p + ".gamma", gamma.data(), ggamma.data(), dim_);
    r.add(p + ".beta", beta.data(), gbeta.data(), dim_);
  }
  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }
  void init(Rng&) override {
    gamma.setOnes();
    beta.setZero();
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, int slot, bool train) {
    const index_t n = X.rows();
    MatrixX<Scalar> xhat(n, dim_);
    VectorX<Scalar> inv_std(n);
    for (index_t i = 0; i < n; ++i) {
      const Scalar mu = X.row(i).mean();
      const Scalar var = (X.row(i).array() - mu).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps_));
      xhat.row(i) = (X.row(i).array() - mu) * inv;
      inv_std[i] = inv;
    }
    MatrixX<Scalar> Y = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
                        beta.transpose().array();
    if (train) cache_.at(static_cast<std::size_t>(slot)) = {std::move(xhat), std::move(inv_std)};
    return Y;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    auto& [xhat, inv_std] = cache_.at(static_cast<std::size_t>(slot));
    const index_t n = dY.rows();
    ggamma.noalias() += (dY.array() * xhat.array()).colwise().sum().matrix().transpose();
    gbeta.noalias() += dY.colwise().sum().transpose();
    MatrixX<Scalar> dxhat = dY.array().rowwise() * gamma.transpose().array();
    MatrixX<Scalar> dX(n, dim_);
    const Scalar invd = Scalar(1) / static_cast<Scalar>(dim_);
    for (index_t i = 0; i < n; ++i) {
      const Scalar s1 = dxhat.row(i).sum();
      const Scalar s2 = (dxhat.row(i).array() * xhat.row(i).array()).sum();
      dX.row(i) = (dxhat.row(i).array() - invd * s1 - xhat.row(i).array() * invd * s2) * inv_std[i];
    }
    return dX;
  }

  index_t dim_;
  double eps_;
  VectorX<Scalar> gamma, beta, ggamma, gbeta;

 private:
  struct Cache {
    MatrixX<Scalar> xhat;
    VectorX<Scalar> inv_std;
  };
  std::vector<Cache> cache_;
};

// ---------------------------------------------------------------------------
// GELU (exact erf form) over token rows.
// ---------------------------------------------------------------------------

template <typename Scalar>
class Gelu : public Module<Scalar> {
 public:
  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, int slot, bool train) {
    MatrixX<Scalar> Y = X.unaryExpr([](Scalar x) {
      return static_cast<Scalar>(0.5 * x * (1.0 + std::erf(static_cast<double>(x) * M_SQRT1_2)));
    });
    if (train) cache_.at(static_cast<std::size_t>(slot)) = X;
    return Y;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    const MatrixX<Scalar>& X = cache_.at(static_cast<std::size_t>(slot));
    MatrixX<Scalar> dX = X.unaryExpr([](Scalar x) {
      const double xd = static_cast<double>(x);
      const double cdf = 0.5 * (1.0 + std::erf(xd * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI);
      return static_cast<Scalar>(cdf + xd * pdf);
    });
    return dX.array() * dY.array();
  }

 private:
  std::vector<MatrixX<Scalar>> cache_;
};

// ---------------------------------------------------------------------------
// Dropout over token rows (inverted scaling). Identity in eval mode.
// ---------------------------------------------------------------------------

template <typename Scalar>
class Dropout : public Module<Scalar> {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  void set_slots(int n) override { masks_.resize(static_cast<std::size_t>(n)); }
  void set_dropout_rng(Rng* rng) override { rng_ = rng; }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, int slot, bool train) {
    if (!train || rate_ <= 0.0) return X;
    auto& mask = masks_.at(static_cast<std::size_t>(slot));
    mask.resize(static_cast<std::size_t>(X.size()));
    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
    MatrixX<Scalar> Y = X;
    Scalar* y = Y.data();
    for (index_t i = 0; i < Y.size(); ++i) {
      const bool keep = rng_->uniform() >= rate_;
      mask[static_cast<std::size_t>(i)] = keep;
      y[i] = keep ? y[i] * scale : Scalar(0);
    }
    return Y;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    if (rate_ <= 0.0) return dY;
    const auto& mask = masks_.at(static_cast<std::size_t>(slot));
    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
    MatrixX<Scalar> dX = dY;
    Scalar* d = dX.data();
    for (index_t i = 0; i < dX.size(); ++i)
      d[i] = mask[static_cast<std::size_t>(i)] ? d[i] * scale : Scalar(0);
    return dX;
  }

  double rate_;

 private:
  Rng* rng_ = nullptr;
  std::vector<std::vector<std::uint8_t>> masks_;
};

// ---------------------------------------------------------------------------
// 3D convolution on (C, D0, D1, D2) tensors, im2col + GEMM in slabs along
// the first spatial axis to bound transient memory.
// ---------------------------------------------------------------------------

template <typename Scalar>
class Conv3d : public Module<Scalar> {
 public:
  Conv3d(index_t cin, index_t cout, index_t k, index_t stride, index_t pad)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
        W(cout, cin * k * k * k), gW(cout, cin * k * k * k), b(cout), gb(cout) {
    gW.setZero();
    b.setZero();
    gb.setZero();
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    r.add(p + ".weight", W.data(), gW.data(), W.size());
    r.add(p + ".bias", b.data(), gb.data(), b.size());
  }
  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }
  void init(Rng& rng) override {
    const double sigma = std::sqrt(2.0 / static_cast<double>(cin_ * k_ * k_ * k_));
    for (index_t i = 0; i < W.size(); ++i) W.data()[i] = static_cast<Scalar>(rng.normal(0.0, sigma));
    b.setZero();
  }

  std::array<index_t, 3> out_extent(const std::array<index_t, 3>& in) const {
    return {(in[0] + 2 * pad_ - k_) / stride_ + 1, (in[1] + 2 * pad_ - k_) / stride_ + 1,
            (in[2] + 2 * pad_ - k_) / stride_ + 1};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, int slot, bool train) {
    const std::array<index_t, 3> in{x.dim(1), x.dim(2), x.dim(3)};
    const auto out = out_extent(in);
    Tensor<Scalar> y({cout_, out[0], out[1], out[2]});
    const index_t cols = cin_ * k_ * k_ * k_;
    const index_t plane = out[1] * out[2];
    const index_t slab = slab_rows(plane, cols);

    MatrixX<Scalar> col;
    for (index_t o0 = 0; o0 < out[0]; o0 += slab) {
      const index_t rows0 = std::min(slab, out[0] - o0) * plane;
      col.resize(rows0, cols);
      gather_cols(x, in, out, o0, std::min(slab, out[0] - o0), col);
      MatrixX<Scalar> Yc = col * W.transpose();  // (rows0 × Cout)
      Yc.rowwise() += b.transpose();
      // scatter rows back into channel-major layout
      for (index_t co = 0; co < cout_; ++co) {
        Scalar* dst = y.data() + ((co * out[0] + o0) * out[1]) * out[2];
        for (index_t r = 0; r < rows0; ++r) dst[r] = Yc(r, co);
      }
    }
    if (train) cache_.at(static_cast<std::size_t>(slot)) = x;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, int slot) {
    const Tensor<Scalar>& x = cache_.at(static_cast<std::size_t>(slot));
    const std::array<index_t, 3> in{x.dim(1), x.dim(2), x.dim(3)};
    const auto out = out_extent(in);
    Tensor<Scalar> dx(x.shape());
    const index_t cols = cin_ * k_ * k_ * k_;
    const index_t plane = out[1] * out[2];
    const index_t slab = slab_rows(plane, cols);

    MatrixX<Scalar> col, dYc, dcol;
    for (index_t o0 = 0; o0 < out[0]; o0 += slab) {
      const index_t s0 = std::min(slab, out[0] - o0);
      const index_t rows0 = s0 * plane;
      col.resize(rows0, cols);
      gather_cols(x, in, out, o0, s0, col);
      dYc.resize(rows0, cout_);
      for (index_t co = 0; co < cout_; ++co) {
        const Scalar* src = dy.data() + ((co * out[0] + o0) * out[1]) * out[2];
        for (index_t r = 0; r < rows0; ++r) dYc(r, co) = src[r];
      }
      gW.noalias() += dYc.transpose() * col;
      gb.noalias() += dYc.colwise().sum().transpose();
      dcol.noalias() = dYc * W;  // (rows0 × cols)
      scatter_cols(dx, in, out, o0, s0, dcol);
    }
    return dx;
  }

  index_t cin_, cout_, k_, stride_, pad_;
  MatrixX<Scalar> W, gW;
  VectorX<Scalar> b, gb;

 private:
  index_t slab_rows(index_t plane, index_t cols) const {
    // keep each im2col chunk around <= 8M scalars
    const index_t budget = (8 << 20) / static_cast<index_t>(sizeof(Scalar));
    return std::max<index_t>(1, budget / std::max<index_t>(1, plane * cols));
  }

  void gather_cols(const Tensor<Scalar>& x, const std::array<index_t, 3>& in,
                   const std::array<index_t, 3>& out, index_t o0_base, index_t s0,
                   MatrixX<Scalar>& col) const {
    col.setZero();
    for (index_t ci = 0; ci < cin_; ++ci) {
      const Scalar* xc = x.data() + ci * in[0] * in[1] * in[2];
      for (index_t k0 = 0; k0 < k_; ++k0)
        for (index_t k1 = 0; k1 < k_; ++k1)
          for (index_t k2 = 0; k2 < k_; ++k2) {
            const index_t c = ((ci * k_ + k0) * k_ + k1) * k_ + k2;
            index_t r = 0;
            for (index_t a = 0; a < s0; ++a) {
              const index_t i0 = (o0_base + a) * stride_ - pad_ + k0;
              for (index_t o1 = 0; o1 < out[1]; ++o1) {
                const index_t i1 = o1 * stride_ - pad_ + k1;
                for (index_t o2 = 0; o2 < out[2]; ++o2, ++r) {
                  const index_t i2 = o2 * stride_ - pad_ + k2;
                  if (i0 >= 0 && i0 < in[0] && i1 >= 0 && i1 < in[1] && i2 >= 0 && i2 < in[2])
                    col(r, c) = xc[(i0 * in[1] + i1) * in[2] + i2];
                }
              }
            }
          }
    }
  }

  void scatter_cols(Tensor<Scalar>& dx, const std::array<index_t, 3>& in,
                    const std::array<index_t, 3>& out, index_t o0_base, index_t s0,
                    const MatrixX<Scalar>& dcol) const {
    for (index_t ci = 0; ci < cin_; ++ci) {
      Scalar* dxc = dx.data() + ci * in[0] * in[1] * in[2];
      for (index_t k0 = 0; k0 < k_; ++k0)
        for (index_t k1 = 0; k1 < k_; ++k1)
          for (index_t k2 = 0; k2 < k_; ++k2) {
            const index_t c = ((ci * k_ + k0) * k_ + k1) * k_ + k2;
            index_t r = 0;
            for (index_t a = 0; a < s0; ++a) {
              const index_t i0 = (o0_base + a) * stride_ - pad_ + k0;
              for (index_t o1 = 0; o1 < out[1]; ++o1) {
                const index_t i1 = o1 * stride_ - pad_ + k1;
                for (index_t o2 = 0; o2 < out[2]; ++o2, ++r) {
                  const index_t i2 = o2 * stride_ - pad_ + k2;
                  if (i0 >= 0 && i0 < in[0] && i1 >= 0 && i1 < in[1] && i2 >= 0 && i2 < in[2])
                    dxc[(i0 * in[1] + i1) * in[2] + i2] += dcol(r, c);
                }
              }
            }
          }
    }
  }

  std::vector<Tensor<Scalar>> cache_;
};

// ---------------------------------------------------------------------------
// Transposed 3D convolution with kernel = stride = 2 (patch expansion; output
// blocks do not overlap).
// ---------------------------------------------------------------------------

template <typename Scalar>
class PatchExpand : public Module<Scalar> {
 public:
  PatchExpand(index_t cin, index_t cout)
      : cin_(cin), cout_(cout), W(cin, cout * 8), gW(cin, cout * 8), b(cout), gb(cout) {
    gW.setZero();
    b.setZero();
    gb.setZero();
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    r.add(p + ".weight", W.data(), gW.data(), W.size());
    r.add(p + ".bias", b.data(), gb.data(), b.size());
  }
  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }
  void init(Rng& rng) override {
    const double sigma = std::sqrt(2.0 / static_cast<double>(cin_));
    for (index_t i = 0; i < W.size(); ++i) W.data()[i] = static_cast<Scalar>(rng.normal(0.0, sigma));
    b.setZero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, int slot, bool train) {
    const index_t d0 = x.dim(1), d1 = x.dim(2), d2 = x.dim(3);
    const index_t nv = d0 * d1 * d2;
    MatrixX<Scalar> Xm(nv, cin_);
    for (index_t c = 0; c < cin_; ++c) {
      const Scalar* xc = x.data() + c * nv;
      for (index_t v = 0; v < nv; ++v) Xm(v, c) = xc[v];
    }
    MatrixX<Scalar> Ye = Xm * W;  // (nv × cout*8)
    Tensor<Scalar> y({cout_, 2 * d0, 2 * d1, 2 * d2});
    scatter(Ye, y, d0, d1, d2, true);
    if (train) cache_.at(static_cast<std::size_t>(slot)) = std::move(Xm);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, int slot) {
    const MatrixX<Scalar>& Xm = cache_.at(static_cast<std::size_t>(slot));
    const index_t d0 = dy.dim(1) / 2, d1 = dy.dim(2) / 2, d2 = dy.dim(3) / 2;
    const index_t nv = d0 * d1 * d2;
    MatrixX<Scalar> dYe(nv, cout_ * 8);
    gather(dYe, dy, d0, d1, d2);
    gW.noalias() += Xm.transpose() * dYe;
    for (index_t co = 0; co < cout_; ++co)
      for (index_t o = 0; o < 8; ++o) gb[co] += dYe.col(co * 8 + o).sum();
    MatrixX<Scalar> dXm = dYe * W.transpose();
    Tensor<Scalar> dx({cin_, d0, d1, d2});
    for (index_t c = 0; c < cin_; ++c) {
      Scalar* dxc = dx.data() + c * nv;
      for (index_t v = 0; v < nv; ++v) dxc[v] = dXm(v, c);
    }
    return dx;
  }

  index_t cin_, cout_;
  MatrixX<Scalar> W, gW;
  VectorX<Scalar> b, gb;

 private:
  void scatter(const MatrixX<Scalar>& Ye, Tensor<Scalar>& y, index_t d0, index_t d1, index_t d2,
               bool add_bias) const {
    const index_t e1 = 2 * d1, e2 = 2 * d2;
    for (index_t co = 0; co < cout_; ++co) {
      Scalar* yc = y.data() + co * (2 * d0) * e1 * e2;
      index_t v = 0;
      for (index_t a = 0; a < d0; ++a)
        for (index_t bidx = 0; bidx < d1; ++bidx)
          for (index_t c = 0; c < d2; ++c, ++v)
            for (index_t o = 0; o < 8; ++o) {
              const index_t oa = 2 * a + (o >> 2), ob = 2 * bidx + ((o >> 1) & 1), oc = 2 * c + (o & 1);
              yc[(oa * e1 + ob) * e2 + oc] = Ye(v, co * 8 + o) + (add_bias ? b[co] : Scalar(0));
            }
    }
  }

  void gather(MatrixX<Scalar>& dYe, const Tensor<Scalar>& dy, index_t d0, index_t d1,
              index_t d2) const {
    const index_t e1 = 2 * d1, e2 = 2 * d2;
    for (index_t co = 0; co < cout_; ++co) {
      const Scalar* dc = dy.data() + co * (2 * d0) * e1 * e2;
      index_t v = 0;
      for (index_t a = 0; a < d0; ++a)
        for (index_t bidx = 0; bidx < d1; ++bidx)
          for (index_t c = 0; c < d2; ++c, ++v)
            for (index_t o = 0; o < 8; ++o) {
              const index_t oa = 2 * a + (o >> 2), ob = 2 * bidx + ((o >> 1) & 1), oc = 2 * c + (o & 1);
              dYe(v, co * 8 + o) = dc[(oa * e1 + ob) * e2 + oc];
            }
    }
  }

  std::vector<MatrixX<Scalar>> cache_;
};

// ---------------------------------------------------------------------------
// Nearest-neighbour x2 upsampling.
// ---------------------------------------------------------------------------

template <typename Scalar>
class NearestUpsample : public Module<Scalar> {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    const index_t c = x.dim(0), d0 = x.dim(1), d1 = x.dim(2), d2 = x.dim(3);
    Tensor<Scalar> y({c, 2 * d0, 2 * d1, 2 * d2});
    for (index_t ci = 0; ci < c; ++ci) {
      const Scalar* xc = x.data() + ci * d0 * d1 * d2;
      Scalar* yc = y.data() + ci * 8 * d0 * d1 * d2;
      for (index_t a = 0; a < 2 * d0; ++a)
        for (index_t bi = 0; bi < 2 * d1; ++bi)
          for (index_t cc = 0; cc < 2 * d2; ++cc)
            yc[(a * 2 * d1 + bi) * 2 * d2 + cc] = xc[((a / 2) * d1 + bi / 2) * d2 + cc / 2];
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    const index_t c = dy.dim(0), e0 = dy.dim(1), e1 = dy.dim(2), e2 = dy.dim(3);
    const index_t d0 = e0 / 2, d1 = e1 / 2, d2 = e2 / 2;
    Tensor<Scalar> dx({c, d0, d1, d2});
    for (index_t ci = 0; ci < c; ++ci) {
      const Scalar* dc = dy.data() + ci * e0 * e1 * e2;
      Scalar* xc = dx.data() + ci * d0 * d1 * d2;
      for (index_t a = 0; a < e0; ++a)
        for (index_t bi = 0; bi < e1; ++bi)
          for (index_t cc = 0; cc < e2; ++cc)
            xc[((a / 2) * d1 + bi / 2) * d2 + cc / 2] += dc[(a * e1 + bi) * e2 + cc];
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Instance normalization: per-sample, per-channel over spatial voxels.
// ---------------------------------------------------------------------------

template <typename Scalar>
class InstanceNorm3d : public Module<Scalar> {
 public:
  explicit InstanceNorm3d(index_t channels, double eps = 1e-5)
      : c_(channels), eps_(eps), gamma(channels), beta(channels), ggamma(channels), gbeta(channels) {
    gamma.setOnes();
    beta.setZero();
    ggamma.setZero();
    gbeta.setZero();
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    r.add(p + ".gamma", gamma.data(), ggamma.data(), c_);
    r.add(p + ".beta", beta.data(), gbeta.data(), c_);
  }
  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }
  void init(Rng&) override {
    gamma.setOnes();
    beta.setZero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, int slot, bool train) {
    const index_t nv = x.size() / c_;
    Tensor<Scalar> y(x.shape());
    Tensor<Scalar> xhat(x.shape());
    VectorX<Scalar> inv_std(c_);
    for (index_t ci = 0; ci < c_; ++ci) {
      ConstVecMap<Scalar> xc(x.data() + ci * nv, nv);
      const Scalar mu = xc.mean();
      const Scalar var = (xc.array() - mu).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps_));
      VecMap<Scalar> hc(xhat.data() + ci * nv, nv);
      hc = (xc.array() - mu) * inv;
      VecMap<Scalar>(y.data() + ci * nv, nv) = hc.array() * gamma[ci] + beta[ci];
      inv_std[ci] = inv;
    }
    if (train) cache_.at(static_cast<std::size_t>(slot)) = {std::move(xhat), std::move(inv_std)};
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, int slot) {
    auto& [xhat, inv_std] = cache_.at(static_cast<std::size_t>(slot));
    const index_t nv = dy.size() / c_;
    Tensor<Scalar> dx(dy.shape());
    const Scalar invn = Scalar(1) / static_cast<Scalar>(nv);
    for (index_t ci = 0; ci < c_; ++ci) {
      ConstVecMap<Scalar> dyc(dy.data() + ci * nv, nv);
      ConstVecMap<Scalar> hc(xhat.data() + ci * nv, nv);
      ggamma[ci] += (dyc.array() * hc.array()).sum();
      gbeta[ci] += dyc.sum();
      const Scalar s1 = dyc.sum() * gamma[ci];
      const Scalar s2 = (dyc.array() * hc.array()).sum() * gamma[ci];
      VecMap<Scalar>(dx.data() + ci * nv, nv) =
          ((dyc.array() * gamma[ci]) - invn * s1 - hc.array() * invn * s2) * inv_std[ci];
    }
    return dx;
  }

  index_t c_;
  double eps_;
  VectorX<Scalar> gamma, beta, ggamma, gbeta;

 private:
  struct Cache {
    Tensor<Scalar> xhat;
    VectorX<Scalar> inv_std;
  };
  std::vector<Cache> cache_;
};

// ---------------------------------------------------------------------------
// Leaky ReLU on tensors.
// ---------------------------------------------------------------------------

template <typename Scalar>
class LeakyRelu : public Module<Scalar> {
 public:
  explicit LeakyRelu(double slope = 0.01) : slope_(slope) {}

  void set_slots(int n) override { cache_.resize(static_cast<std::size_t>(n)); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, int slot, bool train) {
    Tensor<Scalar> y = x;
    const Scalar a = static_cast<Scalar>(slope_);
    for (index_t i = 0; i < y.size(); ++i)
      if (y[i] < 0) y[i] *= a;
    if (train) cache_.at(static_cast<std::size_t>(slot)) = x;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, int slot) {
    const Tensor<Scalar>& x = cache_.at(static_cast<std::size_t>(slot));
    Tensor<Scalar> dx = dy;
    const Scalar a = static_cast<Scalar>(slope_);
    for (index_t i = 0; i < dx.size(); ++i)
      if (x[i] < 0) dx[i] *= a;
    return dx;
  }

  double slope_;

 private:
  std::vector<Tensor<Scalar>> cache_;
};

// ---------------------------------------------------------------------------
// Conv + InstanceNorm + LeakyReLU block, the decoder building unit.
// ---------------------------------------------------------------------------

template <typename Scalar>
class ConvBlock : public Module<Scalar> {
 public:
  ConvBlock(index_t cin, index_t cout, index_t k = 3, index_t stride = 1, index_t pad = 1)
      : conv(cin, cout, k, stride, pad), norm(cout), act() {}

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    conv.register_params(r, p + ".conv");
    norm.register_params(r, p + ".norm");
  }
  void set_slots(int n) override {
    conv.set_slots(n);
    norm.set_slots(n);
    act.set_slots(n);
  }
  void init(Rng& rng) override {
    conv.init(rng);
    norm.init(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, int slot, bool train) {
    return act.forward(norm.forward(conv.forward(x, slot, train), slot, train), slot, train);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy, int slot) {
    return conv.backward(norm.backward(act.backward(dy, slot), slot), slot);
  }

  Conv3d<Scalar> conv;
  InstanceNorm3d<Scalar> norm;
  LeakyRelu<Scalar> act;
};

}  // namespace ssl2::nn
