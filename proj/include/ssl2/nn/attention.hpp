#pragma once

#include <array>
#include <map>
#include <vector>

#include "ssl2/nn/layers.hpp"

namespace ssl2::nn {

using Grid3 = std::array<index_t, 3>;

inline index_t grid_tokens(const Grid3& g) { return g[0] * g[1] * g[2]; }

// Token order is (a * R1 + b) * R2 + c for grid (R0, R1, R2).

template <typename Scalar>
Tensor<Scalar> tokens_to_volume(const MatrixX<Scalar>& tokens, const Grid3& g) {
  const index_t n = tokens.rows(), c = tokens.cols();
  Tensor<Scalar> vol({c, g[0], g[1], g[2]});
  for (index_t ch = 0; ch < c; ++ch) {
    Scalar* dst = vol.data() + ch * n;
    for (index_t t = 0; t < n; ++t) dst[t] = tokens(t, ch);
  }
  return vol;
}

template <typename Scalar>
MatrixX<Scalar> volume_to_tokens(const Tensor<Scalar>& vol) {
  const index_t c = vol.dim(0);
  const index_t n = vol.size() / c;
  MatrixX<Scalar> tokens(n, c);
  for (index_t ch = 0; ch < c; ++ch) {
    const Scalar* src = vol.data() + ch * n;
    for (index_t t = 0; t < n; ++t) tokens(t, ch) = src[t];
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Window partition plan: fuses the cyclic shift and the window-major
// reordering into one gather, plus region ids for the shifted-window
// attention mask.
// ---------------------------------------------------------------------------

struct WindowPlan {
  std::vector<index_t> gather;  // window-major position -> original token
  std::vector<index_t> region;  // window-major position -> mask region id
  index_t n_windows = 0;
  index_t window_tokens = 0;
  bool masked = false;
};

inline WindowPlan make_window_plan(const Grid3& grid, index_t w, bool shifted) {
  WindowPlan plan;
  Grid3 shift{};
  for (int a = 0; a < 3; ++a) shift[a] = (shifted && grid[a] > w) ? w / 2 : 0;
  plan.masked = shift[0] > 0 || shift[1] > 0 || shift[2] > 0;
  const Grid3 wcount{grid[0] / w, grid[1] / w, grid[2] / w};
  plan.n_windows = wcount[0] * wcount[1] * wcount[2];
  plan.window_tokens = w * w * w;
  plan.gather.resize(static_cast<std::size_t>(plan.n_windows * plan.window_tokens));
  plan.region.resize(plan.gather.size());

  auto region_id = [&](index_t pos, int axis) -> index_t {
    if (shift[axis] == 0) return 0;
    if (pos < grid[axis] - w) return 0;
    if (pos < grid[axis] - shift[axis]) return 1;
    return 2;
  };

  index_t p = 0;
  for (index_t wa = 0; wa < wcount[0]; ++wa)
    for (index_t wb = 0; wb < wcount[1]; ++wb)
      for (index_t wc = 0; wc < wcount[2]; ++wc)
        for (index_t ta = 0; ta < w; ++ta)
          for (index_t tb = 0; tb < w; ++tb)
            for (index_t tc = 0; tc < w; ++tc, ++p) {
              const index_t ga = wa * w + ta, gb = wb * w + tb, gc = wc * w + tc;
              const index_t oa = (ga + shift[0]) % grid[0];
              const index_t ob = (gb + shift[1]) % grid[1];
              const index_t oc = (gc + shift[2]) % grid[2];
              plan.gather[static_cast<std::size_t>(p)] = (oa * grid[1] + ob) * grid[2] + oc;
              plan.region[static_cast<std::size_t>(p)] =
                  (region_id(ga, 0) * 3 + region_id(gb, 1)) * 3 + region_id(gc, 2);
            }
  return plan;
}

// ---------------------------------------------------------------------------
// Multi-head attention inside non-overlapping (optionally shifted) windows,
// with a learned relative position bias per head.
// ---------------------------------------------------------------------------

template <typename Scalar>
class WindowAttention : public Module<Scalar> {
 public:
  WindowAttention(index_t dim, index_t heads, index_t window)
      : dim_(dim), heads_(heads), w_(window), head_dim_(dim / heads),
        qkv(dim, 3 * dim), proj(dim, dim),
        bias_table(heads, (2 * window - 1) * (2 * window - 1) * (2 * window - 1)),
        gbias_table(heads, (2 * window - 1) * (2 * window - 1) * (2 * window - 1)) {
    if (dim % heads != 0) throw BadConfig("attention dim not divisible by heads");
    bias_table.setZero();
    gbias_table.setZero();
    build_rel_index();
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    qkv.register_params(r, p + ".qkv");
    proj.register_params(r, p + ".proj");
    r.add(p + ".rel_bias", bias_table.data(), gbias_table.data(), bias_table.size());
  }
  void set_slots(int n) override {
    qkv.set_slots(n);
    proj.set_slots(n);
    cache_.resize(static_cast<std::size_t>(n));
  }
  void init(Rng& rng) override {
    qkv.init(rng);
    proj.init(rng);
    for (index_t i = 0; i < bias_table.size(); ++i)
      bias_table.data()[i] = trunc_normal<Scalar>(rng, 0.02);
  }

  void prepare(const Grid3& grid, bool shifted) {
    plans_.emplace(plan_key(grid, shifted), make_window_plan(grid, w_, shifted));
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, const Grid3& grid, bool shifted, int slot,
                          bool train) {
    const WindowPlan* plan = find_plan(grid, shifted);
    WindowPlan local;
    if (!plan) {
      local = make_window_plan(grid, w_, shifted);
      plan = &local;
    }
    const index_t n = X.rows();
    const index_t ws = plan->window_tokens;
    const index_t nw = plan->n_windows;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(head_dim_)));

    MatrixX<Scalar> Xw(n, dim_);
    for (index_t p = 0; p < n; ++p) Xw.row(p) = X.row(plan->gather[static_cast<std::size_t>(p)]);

    MatrixX<Scalar> QKV = qkv.forward(Xw, slot, train);
    MatrixX<Scalar> Ow(n, dim_);
    MatrixX<Scalar> A_all(nw * heads_ * ws, ws);  // kept for backward

    for (index_t wi = 0; wi < nw; ++wi) {
      const index_t r0 = wi * ws;
      for (index_t h = 0; h < heads_; ++h) {
        const index_t qo = h * head_dim_, ko = dim_ + h * head_dim_, vo = 2 * dim_ + h * head_dim_;
        MatrixX<Scalar> S(ws, ws);
        for (index_t i = 0; i < ws; ++i)
          for (index_t j = 0; j < ws; ++j) {
            Scalar dot = 0;
            for (index_t d = 0; d < head_dim_; ++d) dot += QKV(r0 + i, qo + d) * QKV(r0 + j, ko + d);
            Scalar s = dot * scale + bias_table(h, rel_index_[static_cast<std::size_t>(i * ws + j)]);
            if (plan->masked &&
                plan->region[static_cast<std::size_t>(r0 + i)] != plan->region[static_cast<std::size_t>(r0 + j)])
              s += static_cast<Scalar>(-1e9);
            S(i, j) = s;
          }
        // rowwise softmax
        for (index_t i = 0; i < ws; ++i) {
          const Scalar mx = S.row(i).maxCoeff();
          S.row(i) = (S.row(i).array() - mx).exp();
          S.row(i) /= S.row(i).sum();
        }
        for (index_t i = 0; i < ws; ++i)
          for (index_t d = 0; d < head_dim_; ++d) {
            Scalar acc = 0;
            for (index_t j = 0; j < ws; ++j) acc += S(i, j) * QKV(r0 + j, vo + d);
            Ow(r0 + i, h * head_dim_ + d) = acc;
          }
        A_all.block((wi * heads_ + h) * ws, 0, ws, ws) = S;
      }
    }

    MatrixX<Scalar> Yw = proj.forward(Ow, slot, train);
    MatrixX<Scalar> Y(n, dim_);
    for (index_t p = 0; p < n; ++p) Y.row(plan->gather[static_cast<std::size_t>(p)]) = Yw.row(p);

    if (train) {
      auto& c = cache_.at(static_cast<std::size_t>(slot));
      c.QKV = std::move(QKV);
      c.A = std::move(A_all);
      c.grid = grid;
      c.shifted = shifted;
    }
    return Y;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    auto& c = cache_.at(static_cast<std::size_t>(slot));
    const WindowPlan* plan = find_plan(c.grid, c.shifted);
    WindowPlan local;
    if (!plan) {
      local = make_window_plan(c.grid, w_, c.shifted);
      plan = &local;
    }
    const index_t n = dY.rows();
    const index_t ws = plan->window_tokens;
    const index_t nw = plan->n_windows;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(head_dim_)));

    MatrixX<Scalar> dYw(n, dim_);
    for (index_t p = 0; p < n; ++p) dYw.row(p) = dY.row(plan->gather[static_cast<std::size_t>(p)]);

    MatrixX<Scalar> dOw = proj.backward(dYw, slot);
    MatrixX<Scalar> dQKV = MatrixX<Scalar>::Zero(n, 3 * dim_);

    for (index_t wi = 0; wi < nw; ++wi) {
      const index_t r0 = wi * ws;
      for (index_t h = 0; h < heads_; ++h) {
        const index_t qo = h * head_dim_, ko = dim_ + h * head_dim_, vo = 2 * dim_ + h * head_dim_;
        const auto A = c.A.block((wi * heads_ + h) * ws, 0, ws, ws);
        MatrixX<Scalar> dA(ws, ws), dS(ws, ws);
        // dA = dO V^T; dV = A^T dO
        for (index_t i = 0; i < ws; ++i)
          for (index_t j = 0; j < ws; ++j) {
            Scalar acc = 0;
            for (index_t d = 0; d < head_dim_; ++d)
              acc += dOw(r0 + i, h * head_dim_ + d) * c.QKV(r0 + j, vo + d);
            dA(i, j) = acc;
          }
        for (index_t j = 0; j < ws; ++j)
          for (index_t d = 0; d < head_dim_; ++d) {
            Scalar acc = 0;
            for (index_t i = 0; i < ws; ++i) acc += A(i, j) * dOw(r0 + i, h * head_dim_ + d);
            dQKV(r0 + j, vo + d) += acc;
          }
        // softmax backward per row
        for (index_t i = 0; i < ws; ++i) {
          const Scalar dot = (dA.row(i).array() * A.row(i).array()).sum();
          dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
        }
        // relative bias gradient
        for (index_t i = 0; i < ws; ++i)
          for (index_t j = 0; j < ws; ++j)
            gbias_table(h, rel_index_[static_cast<std::size_t>(i * ws + j)]) += dS(i, j);
        // dQ = dS K scale ; dK = dS^T Q scale
        for (index_t i = 0; i < ws; ++i)
          for (index_t d = 0; d < head_dim_; ++d) {
            Scalar accq = 0;
            for (index_t j = 0; j < ws; ++j) accq += dS(i, j) * c.QKV(r0 + j, ko + d);
            dQKV(r0 + i, qo + d) += accq * scale;
          }
        for (index_t j = 0; j < ws; ++j)
          for (index_t d = 0; d < head_dim_; ++d) {
            Scalar acck = 0;
            for (index_t i = 0; i < ws; ++i) acck += dS(i, j) * c.QKV(r0 + i, qo + d);
            dQKV(r0 + j, ko + d) += acck * scale;
          }
      }
    }

    MatrixX<Scalar> dXw = qkv.backward(dQKV, slot);
    MatrixX<Scalar> dX(n, dim_);
    for (index_t p = 0; p < n; ++p) dX.row(plan->gather[static_cast<std::size_t>(p)]) = dXw.row(p);
    return dX;
  }

  index_t dim_, heads_, w_, head_dim_;
  Dense<Scalar> qkv, proj;
  MatrixX<Scalar> bias_table, gbias_table;

 private:
  static std::uint64_t plan_key(const Grid3& g, bool shifted) {
    return (static_cast<std::uint64_t>(g[0]) << 40) ^ (static_cast<std::uint64_t>(g[1]) << 20) ^
           static_cast<std::uint64_t>(g[2]) ^ (shifted ? (1ULL << 63) : 0ULL);
  }
  const WindowPlan* find_plan(const Grid3& g, bool shifted) const {
    auto it = plans_.find(plan_key(g, shifted));
    return it == plans_.end() ? nullptr : &it->second;
  }

  void build_rel_index() {
    const index_t ws = w_ * w_ * w_;
    const index_t span = 2 * w_ - 1;
    rel_index_.resize(static_cast<std::size_t>(ws * ws));
    auto coord = [&](index_t t) {
      return std::array<index_t, 3>{t / (w_ * w_), (t / w_) % w_, t % w_};
    };
    for (index_t i = 0; i < ws; ++i)
      for (index_t j = 0; j < ws; ++j) {
        const auto ci = coord(i), cj = coord(j);
        const index_t d0 = cj[0] - ci[0] + w_ - 1;
        const index_t d1 = cj[1] - ci[1] + w_ - 1;
        const index_t d2 = cj[2] - ci[2] + w_ - 1;
        rel_index_[static_cast<std::size_t>(i * ws + j)] = (d0 * span + d1) * span + d2;
      }
  }

  struct Cache {
    MatrixX<Scalar> QKV;
    MatrixX<Scalar> A;
    Grid3 grid{};
    bool shifted = false;
  };
  std::vector<Cache> cache_;
  std::vector<index_t> rel_index_;
  std::map<std::uint64_t, WindowPlan> plans_;
};

// ---------------------------------------------------------------------------
// Transformer block: windowed attention + MLP, pre-norm residuals. Blocks at
// odd depth use shifted windows.
// ---------------------------------------------------------------------------

template <typename Scalar>
class SwinBlock : public Module<Scalar> {
 public:
  SwinBlock(index_t dim, index_t heads, index_t window, bool shifted, double dropout,
            index_t mlp_ratio = 4)
      : shifted_(shifted), ln1(dim), attn(dim, heads, window), drop_attn(dropout), ln2(dim),
        fc1(dim, dim * mlp_ratio), fc2(dim * mlp_ratio, dim), drop_mlp1(dropout), drop_mlp2(dropout) {}

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    ln1.register_params(r, p + ".ln1");
    attn.register_params(r, p + ".attn");
    ln2.register_params(r, p + ".ln2");
    fc1.register_params(r, p + ".mlp.fc1");
    fc2.register_params(r, p + ".mlp.fc2");
  }
  void set_slots(int n) override {
    ln1.set_slots(n);
    attn.set_slots(n);
    drop_attn.set_slots(n);
    ln2.set_slots(n);
    fc1.set_slots(n);
    gelu.set_slots(n);
    drop_mlp1.set_slots(n);
    fc2.set_slots(n);
    drop_mlp2.set_slots(n);
  }
  void init(Rng& rng) override {
    ln1.init(rng);
    attn.init(rng);
    ln2.init(rng);
    fc1.init(rng);
    fc2.init(rng);
  }
  void set_dropout_rng(Rng* rng) override {
    drop_attn.set_dropout_rng(rng);
    drop_mlp1.set_dropout_rng(rng);
    drop_mlp2.set_dropout_rng(rng);
  }
  void prepare(const Grid3& grid) { attn.prepare(grid, shifted_); }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, const Grid3& grid, int slot, bool train) {
    MatrixX<Scalar> h = drop_attn.forward(
        attn.forward(ln1.forward(X, slot, train), grid, shifted_, slot, train), slot, train);
    MatrixX<Scalar> x1 = X + h;
    MatrixX<Scalar> m = drop_mlp2.forward(
        fc2.forward(drop_mlp1.forward(gelu.forward(fc1.forward(ln2.forward(x1, slot, train), slot, train),
                                                   slot, train),
                                      slot, train),
                    slot, train),
        slot, train);
    return x1 + m;
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    MatrixX<Scalar> dm = drop_mlp2.backward(dY, slot);
    MatrixX<Scalar> dx1 = dY + ln2.backward(
        fc1.backward(gelu.backward(drop_mlp1.backward(fc2.backward(dm, slot), slot), slot), slot),
        slot);
    MatrixX<Scalar> dh = drop_attn.backward(dx1, slot);
    return dx1 + ln1.backward(attn.backward(dh, slot), slot);
  }

  bool shifted_;
  LayerNorm<Scalar> ln1;
  WindowAttention<Scalar> attn;
  Dropout<Scalar> drop_attn;
  LayerNorm<Scalar> ln2;
  Dense<Scalar> fc1, fc2;
  Gelu<Scalar> gelu;
  Dropout<Scalar> drop_mlp1, drop_mlp2;
};

// ---------------------------------------------------------------------------
// Patch merging: concatenate 2x2x2 token neighbourhoods, LayerNorm, then a
// bias-free linear reduction 8C -> 2C. Halves the grid, doubles channels.
// ---------------------------------------------------------------------------

template <typename Scalar>
class PatchMerging : public Module<Scalar> {
 public:
  explicit PatchMerging(index_t dim) : dim_(dim), norm(8 * dim), reduce(8 * dim, 2 * dim, false) {}

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    norm.register_params(r, p + ".norm");
    reduce.register_params(r, p + ".reduce");
  }
  void set_slots(int n) override {
    norm.set_slots(n);
    reduce.set_slots(n);
  }
  void init(Rng& rng) override {
    norm.init(rng);
    reduce.init(rng);
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, const Grid3& grid, int slot, bool train) {
    const Grid3 og{grid[0] / 2, grid[1] / 2, grid[2] / 2};
    const index_t on = grid_tokens(og);
    MatrixX<Scalar> X8(on, 8 * dim_);
    for (index_t a = 0; a < og[0]; ++a)
      for (index_t b = 0; b < og[1]; ++b)
        for (index_t c = 0; c < og[2]; ++c) {
          const index_t o = (a * og[1] + b) * og[2] + c;
          for (index_t da = 0; da < 2; ++da)
            for (index_t db = 0; db < 2; ++db)
              for (index_t dc = 0; dc < 2; ++dc) {
                const index_t in = ((2 * a + da) * grid[1] + 2 * b + db) * grid[2] + 2 * c + dc;
                const index_t blk = (da * 4 + db * 2 + dc) * dim_;
                X8.block(o, blk, 1, dim_) = X.row(in);
              }
        }
    return reduce.forward(norm.forward(X8, slot, train), slot, train);
  }

  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, const Grid3& grid, int slot) {
    MatrixX<Scalar> dX8 = norm.backward(reduce.backward(dY, slot), slot);
    const Grid3 og{grid[0] / 2, grid[1] / 2, grid[2] / 2};
    MatrixX<Scalar> dX(grid_tokens(grid), dim_);
    for (index_t a = 0; a < og[0]; ++a)
      for (index_t b = 0; b < og[1]; ++b)
        for (index_t c = 0; c < og[2]; ++c) {
          const index_t o = (a * og[1] + b) * og[2] + c;
          for (index_t da = 0; da < 2; ++da)
            for (index_t db = 0; db < 2; ++db)
              for (index_t dc = 0; dc < 2; ++dc) {
                const index_t in = ((2 * a + da) * grid[1] + 2 * b + db) * grid[2] + 2 * c + dc;
                const index_t blk = (da * 4 + db * 2 + dc) * dim_;
                dX.row(in) = dX8.block(o, blk, 1, dim_);
              }
        }
    return dX;
  }

  index_t dim_;
  LayerNorm<Scalar> norm;
  Dense<Scalar> reduce;
};

// ---------------------------------------------------------------------------
// Global average pool over token rows.
// ---------------------------------------------------------------------------

template <typename Scalar>
class GlobalAvgPool : public Module<Scalar> {
 public:
  void set_slots(int n) override { rows_.resize(static_cast<std::size_t>(n)); }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& X, int slot, bool train) {
    if (train) rows_.at(static_cast<std::size_t>(slot)) = X.rows();
    return X.colwise().mean();
  }
  MatrixX<Scalar> backward(const MatrixX<Scalar>& dY, int slot) {
    const index_t n = rows_.at(static_cast<std::size_t>(slot));
    MatrixX<Scalar> dX(n, dY.cols());
    dX.rowwise() = dY.row(0) / static_cast<Scalar>(n);
    return dX;
  }

 private:
  std::vector<index_t> rows_;
};

}  // namespace ssl2::nn
