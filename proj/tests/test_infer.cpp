#include <doctest.h>

#include "ssl2/eval/experiments.hpp"
#include "ssl2/eval/sliding_window.hpp"
#include "ssl2/volume/phantom.hpp"

using namespace ssl2;

namespace {

Sample<float> phantom(index_t extent, std::uint64_t seed) {
  PhantomSpec spec;
  spec.extent = {extent, extent, extent};
  spec.lesion_radius = {2.0, 3.5};
  spec.seed = seed;
  return generate_phantom<float>(spec);
}

// predictor that returns channel-0 input as the foreground probability
auto voxelwise_stub() {
  return [](const Tensor<float>& block) {
    Tensor<float> probs(block.shape());
    const index_t nv = block.size() / 2;
    for (index_t v = 0; v < nv; ++v) {
      probs[v] = 1.0f - block[v];
      probs[nv + v] = block[v];
    }
    return probs;
  };
}

}  // namespace

TEST_CASE("window origins") {
  CHECK(window_origins(96, 96, 24) == std::vector<index_t>{0});
  CHECK(window_origins(168, 96, 24) == std::vector<index_t>{0, 72});
  CHECK(window_origins(100, 96, 24) == std::vector<index_t>{0, 4});
  CHECK(window_origins(240, 96, 24) == std::vector<index_t>{0, 72, 144});
  // coverage: every voxel inside some window
  for (index_t extent : {96, 100, 168, 173, 240}) {
    const auto origins = window_origins(extent, 96, 24);
    std::vector<int> hit(static_cast<std::size_t>(extent), 0);
    for (index_t o : origins)
      for (index_t i = o; i < o + 96; ++i) hit[static_cast<std::size_t>(i)] = 1;
    CHECK(std::count(hit.begin(), hit.end(), 1) == extent);
  }
}

TEST_CASE("sliding window prediction") {
  InferenceConfig cfg;
  cfg.window = 32;
  cfg.overlap = 8;

  SUBCASE("exactly one window reduces to a single forward") {
    auto s = phantom(32, 1);
    const auto direct = voxelwise_stub()(extract_subvolume(s, {0, 0, 0}, 32).data);
    const auto out = sliding_window_predict(voxelwise_stub(), s, cfg);
    const index_t nv = 32 * 32 * 32;
    for (index_t i = 0; i < nv; ++i)
      CHECK(out.voxels[static_cast<std::size_t>(i)] == direct[nv + i]);
  }

  SUBCASE("constant predictor blends to a constant") {
    auto s = phantom(52, 2);
    auto constant = [](const Tensor<float>& block) {
      Tensor<float> probs(block.shape());
      const index_t nv = block.size() / 2;
      for (index_t v = 0; v < nv; ++v) {
        probs[v] = 0.3f;
        probs[nv + v] = 0.7f;
      }
      return probs;
    };
    const auto out = sliding_window_predict(constant, s, cfg);
    for (float v : out.voxels) CHECK(v == doctest::Approx(0.7f).epsilon(1e-6));
  }

  SUBCASE("voxelwise stub: tiled output equals direct application; weights cover") {
    auto s = phantom(60, 3);
    Volume<float> weights;
    const auto out = sliding_window_predict(voxelwise_stub(), s, cfg, &weights);
    for (index_t i = 0; i < s.t1.size(); ++i) {
      CHECK(out.voxels[static_cast<std::size_t>(i)] ==
            doctest::Approx(s.t1.voxels[static_cast<std::size_t>(i)]).epsilon(1e-6));
      CHECK(weights.voxels[static_cast<std::size_t>(i)] >= 1.0f);
    }
  }

  SUBCASE("inputs smaller than the window are padded and cropped back") {
    auto s = phantom(20, 4);
    const auto out = sliding_window_predict(voxelwise_stub(), s, cfg);
    CHECK(out.extent == s.t1.extent);
    for (index_t i = 0; i < s.t1.size(); ++i)
      CHECK(out.voxels[static_cast<std::size_t>(i)] ==
            doctest::Approx(s.t1.voxels[static_cast<std::size_t>(i)]).epsilon(1e-6));
  }
}

TEST_CASE("dice_score") {
  Volume<float> a({4, 4, 4}, Modality::Mask), b({4, 4, 4}, Modality::Mask);

  SUBCASE("both empty -> 1") { CHECK(dice_score(a, b) == 1.0); }

  SUBCASE("identical nonempty -> 1, disjoint -> 0") {
    for (index_t i = 0; i < 8; ++i) a.voxels[static_cast<std::size_t>(i)] = 1;
    CHECK(dice_score(a, a) == 1.0);
    for (index_t i = 8; i < 16; ++i) b.voxels[static_cast<std::size_t>(i)] = 1;
    CHECK(dice_score(a, b) == 0.0);
  }

  SUBCASE("hand-counted overlap") {
    for (index_t i = 0; i < 8; ++i) a.voxels[static_cast<std::size_t>(i)] = 1;
    for (index_t i = 4; i < 12; ++i) b.voxels[static_cast<std::size_t>(i)] = 1;
    CHECK(dice_score(a, b) == doctest::Approx(0.5));  // 2*4 / (8+8)
    CHECK(dice_score(b, a) == dice_score(a, b));
  }

  SUBCASE("monotone under growing overlap at fixed sizes") {
    double prev = -1;
    for (index_t ov = 0; ov <= 8; ++ov) {
      Volume<float> x({4, 4, 4}, Modality::Mask), y({4, 4, 4}, Modality::Mask);
      for (index_t i = 0; i < 8; ++i) x.voxels[static_cast<std::size_t>(i)] = 1;
      for (index_t i = 8 - ov; i < 16 - ov; ++i) y.voxels[static_cast<std::size_t>(i)] = 1;
      const double d = dice_score(x, y);
      CHECK(d >= prev);
      prev = d;
    }
  }

  SUBCASE("shape mismatch throws") {
    Volume<float> c({4, 4, 5}, Modality::Mask);
    CHECK_THROWS_AS(dice_score(a, c), ShapeMismatch);
  }
}

TEST_CASE("select_labeled_slices") {
  const auto sel = select_labeled_slices(200, 0.2, 7, "subj");
  CHECK(std::count(sel.begin(), sel.end(), 1) == 40);
  const auto again = select_labeled_slices(200, 0.2, 7, "subj");
  CHECK(sel == again);  // deterministic per (seed, subject)
  const auto other = select_labeled_slices(200, 0.2, 7, "other");
  CHECK(sel != other);
  const auto full = select_labeled_slices(200, 1.0, 7, "subj");
  CHECK(std::count(full.begin(), full.end(), 1) == 200);
}

namespace {

ExperimentSpec tiny_spec(Protocol protocol, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.protocol = protocol;
  spec.folds = 2;
  spec.seed = seed;
  spec.train.encoder.base_features = 4;
  spec.train.encoder.n_stages = 2;
  spec.train.encoder.heads_per_stage = {2, 4};
  spec.train.encoder.depths_per_stage = {1, 1};
  spec.train.encoder.proj_dim = 8;
  spec.train.encoder.input_size = 16;
  spec.train.encoder.dropout_rate = 0.1;
  spec.train.subvolume_size = 16;
  spec.train.max_steps = 2;
  spec.train.learning_rate = 1e-3;
  spec.inference.window = 16;
  spec.inference.overlap = 4;
  return spec;
}

Dataset tiny_dataset(int labeled, int unlabeled) {
  Dataset d;
  for (int i = 0; i < labeled; ++i) d.labeled.push_back(phantom(24, 50 + static_cast<std::uint64_t>(i)));
  for (int i = 0; i < unlabeled; ++i) {
    auto s = phantom(24, 80 + static_cast<std::uint64_t>(i));
    s.labeled = false;
    s.lesion_mask.reset();
    d.unlabeled.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST_CASE("run_crossval shape, range, reproducibility") {
  const Dataset data = tiny_dataset(4, 2);
  auto spec = tiny_spec(Protocol::CrossVal, 3);
  const std::vector<MethodSpec> methods{{Strategy::FullySupervised, false}, {Strategy::Cps, false}};
  const ResultsTable t = run_crossval(data, methods, 2, spec);

  REQUIRE(t.methods.size() == 2);
  REQUIRE(t.settings.size() == 2);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      REQUIRE(t.values[r][c].size() == 1);
      CHECK(t.values[r][c][0] >= 0.0);
      CHECK(t.values[r][c][0] <= 1.0);
    }

  // mean/std recomputable from per-fold entries
  for (std::size_t r = 0; r < 2; ++r) {
    const auto pooled = t.row_values(r);
    double mean = 0;
    for (double v : pooled) mean += v;
    mean /= static_cast<double>(pooled.size());
    double var = 0;
    for (double v : pooled) var += (v - mean) * (v - mean);
    (void)var;
    CHECK(pooled.size() == 2);
  }

  const ResultsTable t2 = run_crossval(data, methods, 2, spec);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(t.values[r][c] == t2.values[r][c]);
}

TEST_CASE("run_train_size pools unselected training subjects as unlabeled") {
  const Dataset data = tiny_dataset(4, 1);
  auto spec = tiny_spec(Protocol::TrainSize, 5);
  const std::vector<MethodSpec> methods{{Strategy::Cps, false}};
  const ResultsTable t = run_train_size(data, {1, 2}, methods, spec);
  REQUIRE(t.settings == std::vector<std::string>{"1", "2"});
  for (std::size_t c = 0; c < 2; ++c) CHECK(t.values[0][c].size() == 2);  // per-fold entries

  // budget larger than fold train size is rejected
  CHECK_THROWS_AS(run_train_size(data, {3}, methods, spec), ConfigError);
}

TEST_CASE("run_sparse labels the requested slice share") {
  const Dataset data = tiny_dataset(4, 1);
  auto spec = tiny_spec(Protocol::Sparse, 6);
  const std::vector<MethodSpec> methods{{Strategy::FullySupervised, false}};
  const ResultsTable t = run_sparse(data, {0.5, 1.0}, methods, spec);
  REQUIRE(t.settings.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    REQUIRE(t.values[0][c].size() == 1);
    CHECK(t.values[0][c][0] >= 0.0);
    CHECK(t.values[0][c][0] <= 1.0);
  }
}

TEST_CASE("results csv/json round trips") {
  ResultsTable t;
  t.protocol = "crossval";
  t.methods = {"fully_supervised", "cps"};
  t.settings = {"fold_1", "fold_2", "fold_3"};
  t.values = {{{0.51}, {0.52}, {0.53}}, {{0.71}, {0.72}, {0.70}}};

  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string csv = dir + "/ssl2_results_test.csv";
  const std::string js = dir + "/ssl2_results_test.json";
  write_results_csv(csv, t);
  write_results_json(js, t);

  const ResultsTable back = read_results_csv(csv);
  REQUIRE(back.methods == t.methods);
  REQUIRE(back.settings == t.settings);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(back.values[r][c][0] == doctest::Approx(t.values[r][c][0]).epsilon(1e-9));
  std::remove(csv.c_str());
  std::remove(js.c_str());
}
