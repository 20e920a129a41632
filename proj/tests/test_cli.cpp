#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ssl2/cli.hpp"
#include "ssl2/io/checkpoint.hpp"
#include "ssl2/io/manifest.hpp"
#include "ssl2/io/nifti.hpp"
#include "ssl2/report/render.hpp"
#include "ssl2/volume/phantom.hpp"

using namespace ssl2;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::vector<std::string> model_flags_16() {
  return {"--base-features", "4", "--stages", "2", "--heads0", "2",
          "--depth", "1", "--subvolume", "16", "--proj-dim", "8"};
}

}  // namespace

TEST_CASE("phantom command writes a reloadable corpus") {
  TempDir dir("ssl2_cli_phantom");
  CHECK(run_cli({"phantom", "--out", dir.str(), "--count", "3", "--extent", "24", "--seed", "5"}) == 0);
  const std::string manifest = dir.str() + "/manifest.json";
  REQUIRE(fs::exists(manifest));

  // round-trip: loaded samples equal the in-memory generator output
  const auto loaded = load_samples(manifest, /*normalize=*/false);
  REQUIRE(loaded.size() == 3);
  for (int i = 0; i < 3; ++i) {
    PhantomSpec spec;
    spec.extent = {24, 24, 24};
    spec.seed = 5 + static_cast<std::uint64_t>(i);
    const auto expect = generate_phantom<float>(spec);
    CHECK(loaded[static_cast<std::size_t>(i)].t1.voxels == expect.t1.voxels);
    CHECK(loaded[static_cast<std::size_t>(i)].flair.voxels == expect.flair.voxels);
    CHECK(loaded[static_cast<std::size_t>(i)].lesion_mask->voxels == expect.lesion_mask->voxels);
  }

  // reruns with the same seed produce an identical manifest
  TempDir dir2("ssl2_cli_phantom2");
  CHECK(run_cli({"phantom", "--out", dir2.str(), "--count", "3", "--extent", "24", "--seed", "5"}) == 0);
  std::ifstream a(manifest), b(dir2.str() + "/manifest.json");
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("phantom count 0 gives an empty manifest") {
  TempDir dir("ssl2_cli_phantom0");
  CHECK(run_cli({"phantom", "--out", dir.str(), "--count", "0"}) == 0);
  const auto m = read_manifest(dir.str() + "/manifest.json");
  CHECK(m.subjects.empty());
}

TEST_CASE("config errors exit with code 2 and a machine-readable record") {
  TempDir dir("ssl2_cli_err");
  CHECK(run_cli({"phantom", "--out", dir.str(), "--count", "2", "--extent", "24"}) == 0);
  const std::string manifest = dir.str() + "/manifest.json";

  auto args = std::vector<std::string>{"finetune", "--manifest", manifest, "--out", dir.str(),
                                       "--steps", "1", "--lambda-semi", "-1"};
  for (const auto& f : model_flags_16()) args.push_back(f);
  CHECK(run_cli(args) == 2);

  // unknown flag is a parse error
  CHECK(run_cli({"phantom", "--no-such-flag"}) == 2);
  // missing required option
  CHECK(run_cli({"pretrain"}) == 2);
}

TEST_CASE("runtime errors exit with code 3") {
  CHECK(run_cli({"predict", "--t1", "/nope/a.nii", "--flair", "/nope/b.nii", "--checkpoint",
                 "/nope/c.ckpt"}) == 3);
  TempDir dir("ssl2_cli_noresults");
  CHECK(run_cli({"report", "--results", dir.str()}) == 3);
}

TEST_CASE("pretrain, finetune, predict, experiment, report pipeline at desk scale") {
  TempDir dir("ssl2_cli_pipeline");
  const std::string corpus = dir.str() + "/corpus";
  CHECK(run_cli({"phantom", "--out", corpus, "--count", "6", "--extent", "24", "--seed", "11",
                 "--labeled", "4"}) == 0);
  const std::string manifest = corpus + "/manifest.json";

  // pretrain a few steps
  auto pre = std::vector<std::string>{"pretrain", "--manifest", manifest, "--out",
                                      dir.str() + "/pre", "--steps", "2", "--eval-every", "2",
                                      "--seed", "3"};
  for (const auto& f : model_flags_16()) pre.push_back(f);
  CHECK(run_cli(pre) == 0);
  const std::string ckpt = dir.str() + "/pre/pretrain_best.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(read_checkpoint_header(ckpt).training_stage == "pretrain");

  // finetune CPS with the pretrained encoder
  auto fin = std::vector<std::string>{"finetune", "--manifest", manifest, "--out",
                                      dir.str() + "/fin", "--strategy", "cps", "--steps", "2",
                                      "--seed", "3", "--init-checkpoint", ckpt};
  for (const auto& f : model_flags_16()) fin.push_back(f);
  CHECK(run_cli(fin) == 0);
  const std::string fckpt = dir.str() + "/fin/finetune_cps.ckpt";
  REQUIRE(fs::exists(fckpt));

  // predict on one phantom; probabilities must lie in [0,1]
  const auto m = read_manifest(manifest);
  const std::string prob_path = dir.str() + "/prob.nii.gz";
  CHECK(run_cli({"predict", "--t1", corpus + "/" + m.subjects[0].t1_path, "--flair",
                 corpus + "/" + m.subjects[0].flair_path, "--mask",
                 corpus + "/" + *m.subjects[0].mask_path, "--checkpoint", fckpt, "--out", prob_path,
                 "--overlay", dir.str() + "/overlay.png", "--window", "16", "--overlap", "4"}) == 0);
  const auto prob = read_nifti(prob_path, Modality::Mask);
  for (float v : prob.voxels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(fs::exists(dir.str() + "/overlay.png"));

  // crossval experiment with two methods
  auto exp = std::vector<std::string>{"experiment", "--manifest", manifest, "--out",
                                      dir.str() + "/exp", "--protocol", "crossval", "--folds", "2",
                                      "--methods", "fully_supervised,cps", "--steps", "1",
                                      "--seed", "3", "--overlap", "4"};
  for (const auto& f : model_flags_16()) exp.push_back(f);
  CHECK(run_cli(exp) == 0);
  REQUIRE(fs::exists(dir.str() + "/exp/results_crossval.csv"));

  // report renders summary + box plots
  CHECK(run_cli({"report", "--results", dir.str() + "/exp"}) == 0);
  CHECK(fs::exists(dir.str() + "/exp/summary.md"));
  bool any_svg = false;
  for (const auto& e : fs::directory_iterator(dir.str() + "/exp"))
    any_svg = any_svg || e.path().extension() == ".svg";
  CHECK(any_svg);
}

TEST_CASE("config file values are honoured with CLI precedence") {
  TempDir dir("ssl2_cli_config");
  const std::string cfg_path = dir.str() + "/run.toml";
  {
    std::ofstream f(cfg_path);
    f << "[phantom]\ncount = 2\nextent = 24\nseed = 9\nout = \"" << dir.str() << "/from_config\"\n";
  }
  CHECK(run_cli({"phantom", "--config", cfg_path}) == 0);
  CHECK(read_manifest(dir.str() + "/from_config/manifest.json").subjects.size() == 2);

  // command line overrides the file
  CHECK(run_cli({"phantom", "--config", cfg_path, "--count", "1", "--out",
                 dir.str() + "/override"}) == 0);
  CHECK(read_manifest(dir.str() + "/override/manifest.json").subjects.size() == 1);
}

TEST_CASE("output root env var redirects relative paths") {
  TempDir dir("ssl2_cli_envroot");
  setenv("SSL2_OUTPUT_ROOT", dir.str().c_str(), 1);
  CHECK(run_cli({"phantom", "--out", "nested/phantoms", "--count", "1", "--extent", "24"}) == 0);
  unsetenv("SSL2_OUTPUT_ROOT");
  CHECK(fs::exists(dir.path / "nested/phantoms/manifest.json"));
}

TEST_CASE("subprocess invocation honours exit codes") {
  const char* cli = std::getenv("SSL2_CLI");
  if (!cli) return;  // only run under ctest
  TempDir dir("ssl2_cli_subproc");
  const std::string cmd = std::string(cli) + " phantom --out " + dir.str() + " --count 1 --extent 24";
  CHECK(std::system(cmd.c_str()) == 0);
  const std::string bad = std::string(cli) + " report --results " + dir.str() + "/empty 2>/dev/null";
  const int rc = std::system(bad.c_str());
  CHECK(WEXITSTATUS(rc) == 3);
}
