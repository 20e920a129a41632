#include <doctest.h>

#include <filesystem>

#include "ssl2/train/pretrain.hpp"
#include "ssl2/volume/phantom.hpp"

using namespace ssl2;

namespace {

std::vector<Sample<float>> phantom_corpus(int n, index_t extent = 24) {
  std::vector<Sample<float>> out;
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.extent = {extent, extent, extent};
    spec.lesion_radius = {2.0, 3.5};
    spec.seed = 600 + static_cast<std::uint64_t>(i);
    out.push_back(generate_phantom<float>(spec));
  }
  return out;
}

PretrainConfig tiny_config() {
  PretrainConfig cfg;
  cfg.encoder.base_features = 4;
  cfg.encoder.n_stages = 2;
  cfg.encoder.heads_per_stage = {2, 4};
  cfg.encoder.depths_per_stage = {1, 1};
  cfg.encoder.proj_dim = 8;
  cfg.encoder.dropout_rate = 0.0;
  cfg.encoder.input_size = 16;
  cfg.subvolume_size = 16;
  cfg.max_steps = 4;
  cfg.eval_every = 2;
  cfg.patience = 3;
  cfg.learning_rate = 1e-3;
  return cfg;
}

ContrastiveBatch<float> make_batch(const std::vector<Sample<float>>& corpus, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SubVolume<float>> sources;
  for (int i = 0; i < 2; ++i) {
    auto svs = sample_subvolumes(corpus[static_cast<std::size_t>(i)], 1, 16, rng);
    sources.push_back(std::move(svs[0]));
  }
  Rng arng(seed + 1);
  return build_contrastive_batch(sources, arng);
}

}  // namespace

TEST_CASE("split_corpus") {
  const auto corpus = phantom_corpus(10);
  auto [train, eval] = split_corpus(corpus, 0.8, 3);
  CHECK(train.size() == 8);
  CHECK(eval.size() == 2);

  const auto five = phantom_corpus(5);
  auto [t5, e5] = split_corpus(five, 0.8, 3);
  CHECK(t5.size() == 4);
  CHECK(e5.size() == 1);

  auto [t2, e2] = split_corpus(corpus, 0.8, 3);
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(train[i] == t2[i]);  // same seed, same split

  const auto four = phantom_corpus(4);
  CHECK_THROWS_AS(split_corpus(four, 0.8, 3), TooFewSamples);
}

TEST_CASE("pretrain_step") {
  const auto corpus = phantom_corpus(4);
  const auto cfg = tiny_config();

  SUBCASE("zero weights leave parameters unchanged") {
    auto model = build_model<float>(cfg.encoder, true, false, 7);
    Sgd<float> opt(cfg.learning_rate);
    const auto before = model->weight_checksum();
    PretrainLossWeights w{0.0, 0.0, 0.0, 0.5};
    pretrain_step(*model, make_batch(corpus, 9), w, opt);
    CHECK(model->weight_checksum() == before);
  }

  SUBCASE("reported total equals the weighted component sum") {
    auto model = build_model<float>(cfg.encoder, true, false, 7);
    Sgd<float> opt(cfg.learning_rate);
    PretrainLossWeights w{0.7, 1.3, 0.4, 0.5};
    const auto loss = pretrain_step(*model, make_batch(corpus, 9), w, opt);
    CHECK(loss.total ==
          doctest::Approx(0.7 * loss.rot + 1.3 * loss.inpaint + 0.4 * loss.contrast).epsilon(1e-6));
  }

  SUBCASE("identical state and batch give identical losses and weights") {
    auto m1 = build_model<float>(cfg.encoder, true, false, 7);
    auto m2 = build_model<float>(cfg.encoder, true, false, 7);
    Sgd<float> o1(cfg.learning_rate), o2(cfg.learning_rate);
    PretrainLossWeights w;
    const auto l1 = pretrain_step(*m1, make_batch(corpus, 9), w, o1);
    const auto l2 = pretrain_step(*m2, make_batch(corpus, 9), w, o2);
    CHECK(l1.total == l2.total);
    CHECK(m1->weight_checksum() == m2->weight_checksum());
  }

  SUBCASE("a zero-weighted head's parameters stay constant while others move") {
    auto model = build_model<float>(cfg.encoder, true, false, 7);
    Sgd<float> opt(1e-2);
    const auto rot_before = section_checksum(*model, "heads.rot");
    const auto inpaint_before = section_checksum(*model, "heads.inpaint");
    PretrainLossWeights w{0.0, 1.0, 1.0, 0.5};  // rotation off
    pretrain_step(*model, make_batch(corpus, 11), w, opt);
    CHECK(section_checksum(*model, "heads.rot") == rot_before);
    CHECK(section_checksum(*model, "heads.inpaint") != inpaint_before);
  }

  SUBCASE("model without heads throws") {
    auto plain = build_model<float>(cfg.encoder, false, true, 7);
    Sgd<float> opt(1e-3);
    PretrainLossWeights w;
    CHECK_THROWS_AS(pretrain_step(*plain, make_batch(corpus, 9), w, opt), HeadsAbsent);
  }
}

TEST_CASE("run_pretraining mechanics") {
  const auto corpus = phantom_corpus(6);
  const std::string ckpt =
      (std::filesystem::temp_directory_path() / "ssl2_pretrain_test.ckpt").string();

  SUBCASE("max_steps=0 leaves only the initial checkpoint and eval") {
    auto cfg = tiny_config();
    cfg.max_steps = 0;
    const auto report = run_pretraining(corpus, cfg, ckpt);
    CHECK(report.steps.empty());
    CHECK(report.eval_l1.size() == 1);
    CHECK(report.best_step == 0);
    CHECK(std::filesystem::exists(ckpt));
  }

  SUBCASE("patience stops after consecutive non-improving evals") {
    auto cfg = tiny_config();
    cfg.max_steps = 100;
    cfg.eval_every = 1;
    cfg.patience = 1;
    cfg.weights = {0.0, 0.0, 0.0, 0.5};  // zero gradients freeze the weights
    const auto report = run_pretraining(corpus, cfg, ckpt);
    CHECK(report.stopped_early);
    CHECK(report.eval_l1.size() == 2);  // step-0 eval plus one stale eval
    CHECK(report.steps.size() == 1);
  }

  SUBCASE("best checkpoint reproduces its recorded eval L1") {
    auto cfg = tiny_config();
    cfg.max_steps = 6;
    cfg.eval_every = 2;
    const auto report = run_pretraining(corpus, cfg, ckpt);
    auto model = build_model<float>(cfg.encoder, true, false, 1234);
    load_checkpoint_into(*model, ckpt);
    auto [train, eval] = split_corpus(corpus, 0.8, cfg.seed);
    const double l1 = eval_inpaint_l1(*model, eval, cfg.subvolume_size);
    CHECK(l1 == doctest::Approx(report.best_l1).epsilon(1e-6));
  }

  SUBCASE("losses stay finite") {
    auto cfg = tiny_config();
    cfg.max_steps = 10;
    const auto report = run_pretraining(corpus, cfg, ckpt);
    for (const auto& s : report.steps) {
      CHECK(std::isfinite(s.rot));
      CHECK(std::isfinite(s.inpaint));
      CHECK(std::isfinite(s.contrast));
      CHECK(std::isfinite(s.total));
    }
  }

  std::remove(ckpt.c_str());
}
