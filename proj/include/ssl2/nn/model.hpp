#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssl2/core/rng.hpp"
#include "ssl2/nn/attention.hpp"
#include "ssl2/nn/layers.hpp"

namespace ssl2 {

// Hierarchical windowed-attention encoder configuration. Defaults follow the
// production setup: 96^3 inputs, patch/window 2, 4 stages, 12 base features,
// heads [3, 6, 12, 24].
struct EncoderConfig {
  index_t in_channels = 2;
  index_t patch_size = 2;
  index_t window_size = 2;
  index_t base_features = 12;
  index_t n_stages = 4;
  std::vector<index_t> heads_per_stage{3, 6, 12, 24};
  std::vector<index_t> depths_per_stage{2, 2, 2, 2};
  index_t mlp_ratio = 4;
  index_t proj_dim = 512;   // contrastive projection width
  double dropout_rate = 0.1;
  index_t input_size = 96;  // nominal training block edge

  index_t stage_dim(index_t s) const { return base_features << s; }
  index_t bottleneck_dim() const { return base_features << n_stages; }
  index_t token_grid_edge() const { return input_size / patch_size; }
  index_t bottleneck_edge() const { return token_grid_edge() >> n_stages; }

  void validate() const {
    if (in_channels < 1) throw BadConfig("in_channels must be >= 1");
    if (patch_size != 2) throw BadConfig("patch_size must be 2");
    if (window_size != 2) throw BadConfig("window_size must be 2");
    if (n_stages < 1) throw BadConfig("n_stages must be >= 1");
    if (static_cast<index_t>(heads_per_stage.size()) != n_stages)
      throw BadConfig("heads_per_stage length must equal n_stages");
    if (static_cast<index_t>(depths_per_stage.size()) != n_stages)
      throw BadConfig("depths_per_stage length must equal n_stages");
    if (base_features % 2 != 0) throw BadConfig("base_features must be even");
    const index_t div = patch_size << n_stages;
    if (input_size % div != 0)
      throw BadConfig("input_size must be divisible by patch_size * 2^n_stages");
    if (input_size / div < 1) throw BadConfig("input_size too small for stage count");
    for (index_t s = 0; s < n_stages; ++s) {
      if (stage_dim(s) % heads_per_stage[static_cast<std::size_t>(s)] != 0)
        throw BadConfig("stage dim not divisible by head count");
      if (depths_per_stage[static_cast<std::size_t>(s)] < 1) throw BadConfig("stage depth must be >= 1");
    }
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"in_channels", c.in_channels},   {"patch_size", c.patch_size},
       {"window_size", c.window_size},   {"base_features", c.base_features},
       {"n_stages", c.n_stages},         {"heads_per_stage", c.heads_per_stage},
       {"depths_per_stage", c.depths_per_stage}, {"mlp_ratio", c.mlp_ratio},
       {"proj_dim", c.proj_dim},         {"dropout_rate", c.dropout_rate},
       {"input_size", c.input_size}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("patch_size").get_to(c.patch_size);
  j.at("window_size").get_to(c.window_size);
  j.at("base_features").get_to(c.base_features);
  j.at("n_stages").get_to(c.n_stages);
  j.at("heads_per_stage").get_to(c.heads_per_stage);
  j.at("depths_per_stage").get_to(c.depths_per_stage);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("proj_dim").get_to(c.proj_dim);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("input_size").get_to(c.input_size);
}

inline bool encoder_compatible(const EncoderConfig& a, const EncoderConfig& b) {
  return a.in_channels == b.in_channels && a.patch_size == b.patch_size &&
         a.window_size == b.window_size && a.base_features == b.base_features &&
         a.n_stages == b.n_stages && a.heads_per_stage == b.heads_per_stage &&
         a.depths_per_stage == b.depths_per_stage && a.mlp_ratio == b.mlp_ratio;
}

namespace nn {

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Tensor<Scalar> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& x, index_t ca) {
  Tensor<Scalar> a({ca, x.dim(1), x.dim(2), x.dim(3)});
  Tensor<Scalar> b({x.dim(0) - ca, x.dim(1), x.dim(2), x.dim(3)});
  std::copy(x.data(), x.data() + a.size(), a.data());
  std::copy(x.data() + a.size(), x.data() + x.size(), b.data());
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Encoder: patch embedding, n_stages of transformer blocks with patch merging
// after each stage. Stage outputs (pre-merge) are the decoder skips.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct EncoderOut {
  MatrixX<Scalar> bottleneck;            // tokens, (edge/2^n)^3 x 16F
  Grid3 bottleneck_grid{};
  std::vector<MatrixX<Scalar>> skips;    // per stage, pre-merge
  std::vector<Grid3> skip_grids;
};

template <typename Scalar>
class Encoder : public Module<Scalar> {
 public:
  explicit Encoder(const EncoderConfig& cfg)
      : cfg_(cfg),
        patch_embed(cfg.in_channels, cfg.base_features, cfg.patch_size, cfg.patch_size, 0),
        embed_norm(cfg.base_features), bottleneck_norm(cfg.bottleneck_dim()) {
    for (index_t s = 0; s < cfg.n_stages; ++s) {
      const index_t dim = cfg.stage_dim(s);
      const index_t heads = cfg.heads_per_stage[static_cast<std::size_t>(s)];
      const index_t depth = cfg.depths_per_stage[static_cast<std::size_t>(s)];
      stage_blocks_.emplace_back();
      for (index_t d = 0; d < depth; ++d)
        stage_blocks_.back().push_back(std::make_unique<SwinBlock<Scalar>>(
            dim, heads, cfg.window_size, d % 2 == 1, cfg.dropout_rate, cfg.mlp_ratio));
      merges_.push_back(std::make_unique<PatchMerging<Scalar>>(dim));
    }
    prepare(cfg.input_size);
  }

  // Precompute window plans for a given input edge so eval-mode forwards on
  // that size stay read-only.
  void prepare(index_t input_size) {
    index_t edge = input_size / cfg_.patch_size;
    for (auto& blocks : stage_blocks_) {
      for (auto& b : blocks) b->prepare({edge, edge, edge});
      edge /= 2;
    }
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    patch_embed.register_params(r, p + ".patch_embed");
    embed_norm.register_params(r, p + ".embed_norm");
    for (std::size_t s = 0; s < stage_blocks_.size(); ++s) {
      for (std::size_t d = 0; d < stage_blocks_[s].size(); ++d)
        stage_blocks_[s][d]->register_params(
            r, p + ".stage" + std::to_string(s) + ".block" + std::to_string(d));
      merges_[s]->register_params(r, p + ".stage" + std::to_string(s) + ".merge");
    }
    bottleneck_norm.register_params(r, p + ".bottleneck_norm");
  }
  void set_slots(int n) override {
    patch_embed.set_slots(n);
    embed_norm.set_slots(n);
    for (auto& blocks : stage_blocks_)
      for (auto& b : blocks) b->set_slots(n);
    for (auto& m : merges_) m->set_slots(n);
    bottleneck_norm.set_slots(n);
    slot_edge_.resize(static_cast<std::size_t>(n));
  }
  void init(Rng& rng) override {
    patch_embed.init(rng);
    embed_norm.init(rng);
    for (auto& blocks : stage_blocks_)
      for (auto& b : blocks) b->init(rng);
    for (auto& m : merges_) m->init(rng);
    bottleneck_norm.init(rng);
  }
  void set_dropout_rng(Rng* rng) override {
    for (auto& blocks : stage_blocks_)
      for (auto& b : blocks) b->set_dropout_rng(rng);
  }

  EncoderOut<Scalar> forward(const Tensor<Scalar>& x, int slot, bool train) {
    EncoderOut<Scalar> out;
    Tensor<Scalar> emb = patch_embed.forward(x, slot, train);
    Grid3 grid{emb.dim(1), emb.dim(2), emb.dim(3)};
    MatrixX<Scalar> tokens = embed_norm.forward(volume_to_tokens(emb), slot, train);
    for (std::size_t s = 0; s < stage_blocks_.size(); ++s) {
      for (auto& b : stage_blocks_[s]) tokens = b->forward(tokens, grid, slot, train);
      out.skips.push_back(tokens);
      out.skip_grids.push_back(grid);
      tokens = merges_[s]->forward(tokens, grid, slot, train);
      grid = {grid[0] / 2, grid[1] / 2, grid[2] / 2};
    }
    out.bottleneck = bottleneck_norm.forward(tokens, slot, train);
    out.bottleneck_grid = grid;
    if (train) slot_edge_.at(static_cast<std::size_t>(slot)) = x.dim(1);
    return out;
  }

  // d_skips may be empty (no decoder path); entries may be empty matrices.
  Tensor<Scalar> backward(const MatrixX<Scalar>& d_bottleneck,
                          const std::vector<MatrixX<Scalar>>& d_skips, int slot) {
    const index_t edge0 = slot_edge_.at(static_cast<std::size_t>(slot)) / cfg_.patch_size;
    MatrixX<Scalar> d = bottleneck_norm.backward(d_bottleneck, slot);
    for (std::size_t s = stage_blocks_.size(); s-- > 0;) {
      const index_t e = edge0 >> s;
      const Grid3 grid{e, e, e};
      d = merges_[s]->backward(d, grid, slot);
      if (s < d_skips.size() && d_skips[s].size() > 0) d += d_skips[s];
      for (std::size_t b = stage_blocks_[s].size(); b-- > 0;)
        d = stage_blocks_[s][b]->backward(d, slot);
    }
    d = embed_norm.backward(d, slot);
    return patch_embed.backward(tokens_to_volume(d, {edge0, edge0, edge0}), slot);
  }

  EncoderConfig cfg_;
  Conv3d<Scalar> patch_embed;
  LayerNorm<Scalar> embed_norm;
  std::vector<std::vector<std::unique_ptr<SwinBlock<Scalar>>>> stage_blocks_;
  std::vector<std::unique_ptr<PatchMerging<Scalar>>> merges_;
  LayerNorm<Scalar> bottleneck_norm;

 private:
  std::vector<index_t> slot_edge_;
};

// ---------------------------------------------------------------------------
// Segmentation decoder: nearest-up + conv fusion per stage skip, a patch
// expansion back to voxel resolution, a raw-input stem, and a 1x1x1 head
// emitting 2-class logits.
// ---------------------------------------------------------------------------

template <typename Scalar>
class SegDecoder : public Module<Scalar> {
 public:
  explicit SegDecoder(const EncoderConfig& cfg) : cfg_(cfg), expand(cfg.base_features, cfg.base_features),
        stem(cfg.in_channels, cfg.base_features),
        fuse(2 * cfg.base_features, cfg.base_features),
        head(cfg.base_features, 2, 1, 1, 0) {
    index_t cin = cfg.bottleneck_dim();
    for (index_t s = cfg.n_stages; s-- > 0;) {
      const index_t cskip = cfg.stage_dim(s);
      levels_.push_back(std::make_unique<ConvBlock<Scalar>>(cin + cskip, cskip));
      cin = cskip;
    }
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    for (std::size_t i = 0; i < levels_.size(); ++i)
      levels_[i]->register_params(r, p + ".level" + std::to_string(levels_.size() - 1 - i));
    expand.register_params(r, p + ".expand");
    stem.register_params(r, p + ".stem");
    fuse.register_params(r, p + ".fuse");
    head.register_params(r, p + ".head");
  }
  void set_slots(int n) override {
    for (auto& l : levels_) l->set_slots(n);
    expand.set_slots(n);
    stem.set_slots(n);
    fuse.set_slots(n);
    head.set_slots(n);
  }
  void init(Rng& rng) override {
    for (auto& l : levels_) l->init(rng);
    expand.init(rng);
    stem.init(rng);
    fuse.init(rng);
    head.init(rng);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const EncoderOut<Scalar>& enc, int slot,
                         bool train) {
    Tensor<Scalar> v = tokens_to_volume(enc.bottleneck, enc.bottleneck_grid);
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const std::size_t s = levels_.size() - 1 - i;  // stage index of this skip
      Tensor<Scalar> up = upsample.forward(v);
      Tensor<Scalar> skip = tokens_to_volume(enc.skips[s], enc.skip_grids[s]);
      v = levels_[i]->forward(concat_channels(up, skip), slot, train);
    }
    Tensor<Scalar> full = expand.forward(v, slot, train);
    Tensor<Scalar> stem_out = stem.forward(x, slot, train);
    Tensor<Scalar> fused = fuse.forward(concat_channels(full, stem_out), slot, train);
    return head.forward(fused, slot, train);
  }

  struct Back {
    MatrixX<Scalar> d_bottleneck;
    std::vector<MatrixX<Scalar>> d_skips;
  };

  Back backward(const Tensor<Scalar>& dlogits, int slot) {
    Back out;
    out.d_skips.resize(levels_.size());
    Tensor<Scalar> dfused = head.backward(dlogits, slot);
    Tensor<Scalar> dcat = fuse.backward(dfused, slot);
    auto [dfull, dstem] = split_channels(dcat, cfg_.base_features);
    stem.backward(dstem, slot);  // input gradient unused
    Tensor<Scalar> dv = expand.backward(dfull, slot);
    for (std::size_t i = levels_.size(); i-- > 0;) {
      const std::size_t s = levels_.size() - 1 - i;
      Tensor<Scalar> dcat_l = levels_[i]->backward(dv, slot);
      const index_t cup = (s + 1 < levels_.size()) ? cfg_.stage_dim(static_cast<index_t>(s) + 1)
                                                   : cfg_.bottleneck_dim();
      auto [dup, dskip] = split_channels(dcat_l, cup);
      const Grid3 g{dskip.dim(1), dskip.dim(2), dskip.dim(3)};
      out.d_skips[s] = volume_to_tokens(dskip);
      (void)g;
      dv = upsample.backward(dup);
    }
    const Grid3 bg{dv.dim(1), dv.dim(2), dv.dim(3)};
    out.d_bottleneck = volume_to_tokens(dv);
    (void)bg;
    return out;
  }

  EncoderConfig cfg_;
  NearestUpsample<Scalar> upsample;
  std::vector<std::unique_ptr<ConvBlock<Scalar>>> levels_;  // deepest first
  PatchExpand<Scalar> expand;
  ConvBlock<Scalar> stem;
  ConvBlock<Scalar> fuse;
  Conv3d<Scalar> head;
};

// ---------------------------------------------------------------------------
// Proxy heads: 4-way rotation classifier and contrastive projector off a
// shared pooled bottleneck, plus a 6-block convolutional inpainting decoder
// (kernel 3, instance norm, leaky rectifier, n_stages upsampling stages, then
// a patch expansion back to the input grid).
// ---------------------------------------------------------------------------

template <typename Scalar>
class ProxyHeads : public Module<Scalar> {
 public:
  explicit ProxyHeads(const EncoderConfig& cfg)
      : cfg_(cfg), rot(cfg.bottleneck_dim(), 4), contrast(cfg.bottleneck_dim(), cfg.proj_dim),
        inpaint_in(cfg.bottleneck_dim(), cfg.bottleneck_dim() / 2),
        inpaint_out(cfg.base_features / 2, cfg.in_channels) {
    index_t c = cfg.bottleneck_dim() / 2;
    for (index_t s = 0; s < cfg.n_stages; ++s) {
      inpaint_up_.push_back(std::make_unique<ConvBlock<Scalar>>(c, c / 2));
      c /= 2;
    }
  }

  void register_params(ParamRegistry<Scalar>& r, const std::string& p) override {
    rot.register_params(r, p + ".rot");
    contrast.register_params(r, p + ".contrast");
    inpaint_in.register_params(r, p + ".inpaint.block0");
    for (std::size_t i = 0; i < inpaint_up_.size(); ++i)
      inpaint_up_[i]->register_params(r, p + ".inpaint.block" + std::to_string(i + 1));
    inpaint_out.register_params(r, p + ".inpaint.out");
  }
  void set_slots(int n) override {
    pool.set_slots(n);
    rot.set_slots(n);
    contrast.set_slots(n);
    inpaint_in.set_slots(n);
    for (auto& u : inpaint_up_) u->set_slots(n);
    inpaint_out.set_slots(n);
  }
  void init(Rng& rng) override {
    rot.init(rng);
    contrast.init(rng);
    inpaint_in.init(rng);
    for (auto& u : inpaint_up_) u->init(rng);
    inpaint_out.init(rng);
  }

  struct Out {
    Tensor<Scalar> rot_logits;  // {4}
    Tensor<Scalar> recon;       // input shape
    Tensor<Scalar> projection;  // {proj_dim}
  };

  ProxyHeads(const ProxyHeads&) = delete;

  Out forward(const EncoderOut<Scalar>& enc, int slot, bool train) {
    Out out;
    MatrixX<Scalar> pooled = pool.forward(enc.bottleneck, slot, train);
    MatrixX<Scalar> rl = rot.forward(pooled, slot, train);
    MatrixX<Scalar> pv = contrast.forward(pooled, slot, train);
    out.rot_logits = Tensor<Scalar>({4});
    for (index_t i = 0; i < 4; ++i) out.rot_logits[i] = rl(0, i);
    out.projection = Tensor<Scalar>({cfg_.proj_dim});
    for (index_t i = 0; i < cfg_.proj_dim; ++i) out.projection[i] = pv(0, i);

    Tensor<Scalar> v = tokens_to_volume(enc.bottleneck, enc.bottleneck_grid);
    v = inpaint_in.forward(v, slot, train);
    for (auto& u : inpaint_up_) v = u->forward(upsample.forward(v), slot, train);
    out.recon = inpaint_out.forward(v, slot, train);
    return out;
  }

  // Combines the three head gradients into one bottleneck-token gradient.
  MatrixX<Scalar> backward(const Tensor<Scalar>& d_rot, const Tensor<Scalar>& d_recon,
                           const Tensor<Scalar>& d_proj, const Grid3& bottleneck_grid, int slot) {
    MatrixX<Scalar> drl(1, 4);
    for (index_t i = 0; i < 4; ++i) drl(0, i) = d_rot[i];
    MatrixX<Scalar> dpv(1, cfg_.proj_dim);
    for (index_t i = 0; i < cfg_.proj_dim; ++i) dpv(0, i) = d_proj[i];
    MatrixX<Scalar> dpool = rot.backward(drl, slot) + contrast.backward(dpv, slot);
    MatrixX<Scalar> d_bneck = pool.backward(dpool, slot);

    Tensor<Scalar> dv = inpaint_out.backward(d_recon, slot);
    for (std::size_t i = inpaint_up_.size(); i-- > 0;)
      dv = upsample.backward(inpaint_up_[i]->backward(dv, slot));
    dv = inpaint_in.backward(dv, slot);
    d_bneck += volume_to_tokens(dv);
    (void)bottleneck_grid;
    return d_bneck;
  }

  EncoderConfig cfg_;
  GlobalAvgPool<Scalar> pool;
  Dense<Scalar> rot, contrast;
  ConvBlock<Scalar> inpaint_in;
  std::vector<std::unique_ptr<ConvBlock<Scalar>>> inpaint_up_;
  NearestUpsample<Scalar> upsample;
  PatchExpand<Scalar> inpaint_out;
};

}  // namespace nn

// ---------------------------------------------------------------------------
// SegModel: encoder (+ optional decoder and proxy heads) with a parameter
// registry, seeded init, and per-slot forward/backward.
// ---------------------------------------------------------------------------

template <typename Scalar>
class SegModel {
 public:
  SegModel(const EncoderConfig& cfg, bool with_proxy, bool with_decoder)
      : cfg_(cfg), encoder_(cfg) {
    cfg.validate();
    if (with_decoder) decoder_ = std::make_unique<nn::SegDecoder<Scalar>>(cfg);
    if (with_proxy) heads_ = std::make_unique<nn::ProxyHeads<Scalar>>(cfg);
    encoder_.register_params(registry_, "encoder");
    if (decoder_) decoder_->register_params(registry_, "decoder");
    if (heads_) heads_->register_params(registry_, "heads");
    set_slots(1);
  }

  SegModel(const SegModel&) = delete;
  SegModel& operator=(const SegModel&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  bool has_decoder() const { return decoder_ != nullptr; }
  bool has_proxy() const { return heads_ != nullptr; }
  nn::ParamRegistry<Scalar>& params() { return registry_; }
  const nn::ParamRegistry<Scalar>& params() const { return registry_; }
  index_t param_count() const { return registry_.total(); }
  std::uint64_t weight_checksum() const { return registry_.checksum(); }
  void zero_grads() { registry_.zero_grads(); }

  void init_weights(std::uint64_t seed) {
    Rng rng = Rng::root(seed).fork("init");
    encoder_.init(rng);
    if (decoder_) decoder_->init(rng);
    if (heads_) heads_->init(rng);
  }

  void seed_dropout(std::uint64_t seed) {
    dropout_rng_ = Rng::root(seed).fork("dropout");
    encoder_.set_dropout_rng(&dropout_rng_);
  }

  void set_slots(int n) {
    slots_ = n;
    encoder_.set_slots(n);
    if (decoder_) decoder_->set_slots(n);
    if (heads_) heads_->set_slots(n);
    enc_out_.resize(static_cast<std::size_t>(n));
  }
  int slots() const { return slots_; }

  void check_input(const Tensor<Scalar>& x) const {
    if (x.rank() != 4 || x.dim(0) != cfg_.in_channels) throw ShapeMismatch("model input must be {C,S,S,S}");
    if (x.dim(1) != x.dim(2) || x.dim(1) != x.dim(3)) throw ShapeMismatch("model input must be cubic");
    const index_t div = cfg_.patch_size << cfg_.n_stages;
    if (x.dim(1) % div != 0) throw ShapeMismatch("model input edge not divisible by patch * 2^stages");
  }

  // --- segmentation path ---

  Tensor<Scalar> forward_segment_one(const Tensor<Scalar>& x, int slot, bool train) {
    check_input(x);
    if (!decoder_) throw HeadsAbsent("model was built without a segmentation decoder");
    nn::EncoderOut<Scalar> enc = encoder_.forward(x, slot, train);
    Tensor<Scalar> logits = decoder_->forward(x, enc, slot, train);
    if (train) enc_out_.at(static_cast<std::size_t>(slot)) = std::move(enc);
    return logits;
  }

  std::vector<Tensor<Scalar>> forward_segment(const std::vector<Tensor<Scalar>>& batch, bool train) {
    if (train && static_cast<int>(batch.size()) > slots_) set_slots(static_cast<int>(batch.size()));
    std::vector<Tensor<Scalar>> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      out.push_back(forward_segment_one(batch[i], static_cast<int>(i), train));
    return out;
  }

  void backward_segment(const Tensor<Scalar>& dlogits, int slot) {
    auto back = decoder_->backward(dlogits, slot);
    encoder_.backward(back.d_bottleneck, back.d_skips, slot);
  }

  // --- proxy path ---

  using ProxyOut = typename nn::ProxyHeads<Scalar>::Out;

  ProxyOut forward_proxy_one(const Tensor<Scalar>& x, int slot, bool train) {
    check_input(x);
    if (!heads_) throw HeadsAbsent("model was built without proxy heads");
    nn::EncoderOut<Scalar> enc = encoder_.forward(x, slot, train);
    ProxyOut out = heads_->forward(enc, slot, train);
    if (train) enc_out_.at(static_cast<std::size_t>(slot)) = std::move(enc);
    return out;
  }

  std::vector<ProxyOut> forward_proxy(const std::vector<Tensor<Scalar>>& batch, bool train) {
    if (train && static_cast<int>(batch.size()) > slots_) set_slots(static_cast<int>(batch.size()));
    std::vector<ProxyOut> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      out.push_back(forward_proxy_one(batch[i], static_cast<int>(i), train));
    return out;
  }

  void backward_proxy(const Tensor<Scalar>& d_rot, const Tensor<Scalar>& d_recon,
                      const Tensor<Scalar>& d_proj, int slot) {
    const auto& enc = enc_out_.at(static_cast<std::size_t>(slot));
    MatrixX<Scalar> d_bneck = heads_->backward(d_rot, d_recon, d_proj, enc.bottleneck_grid, slot);
    encoder_.backward(d_bneck, {}, slot);
  }

  nn::Encoder<Scalar>& encoder() { return encoder_; }

 private:
  EncoderConfig cfg_;
  nn::Encoder<Scalar> encoder_;
  std::unique_ptr<nn::SegDecoder<Scalar>> decoder_;
  std::unique_ptr<nn::ProxyHeads<Scalar>> heads_;
  nn::ParamRegistry<Scalar> registry_;
  Rng dropout_rng_;
  int slots_ = 0;
  std::vector<nn::EncoderOut<Scalar>> enc_out_;
};

// Deterministic factory: seeded weight init, proxy heads attached on demand.
template <typename Scalar>
std::unique_ptr<SegModel<Scalar>> build_model(const EncoderConfig& cfg, bool with_proxy,
                                              bool with_decoder, std::uint64_t seed) {
  auto m = std::make_unique<SegModel<Scalar>>(cfg, with_proxy, with_decoder);
  m->init_weights(seed);
  m->seed_dropout(seed);
  return m;
}

}  // namespace ssl2
