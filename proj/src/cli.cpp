#include "ssl2/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssl2/eval/experiments.hpp"
#include "ssl2/io/manifest.hpp"
#include "ssl2/io/nifti.hpp"
#include "ssl2/report/render.hpp"
#include "ssl2/train/pretrain.hpp"
#include "ssl2/volume/phantom.hpp"

namespace ssl2 {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Relative output paths land under $SSL2_OUTPUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("SSL2_OUTPUT_ROOT");
  fs::path p(path);
  if (root && *root && p.is_relative()) p = fs::path(root) / p;
  return p.string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create output directory " + dir + ": " + ec.message());
}

struct ModelFlags {
  index_t base_features = 12;
  index_t stages = 4;
  index_t depth = 2;
  index_t heads0 = 3;
  index_t subvolume = 96;
  index_t proj_dim = 512;
  double dropout = 0.1;

  EncoderConfig encoder() const {
    EncoderConfig cfg;
    cfg.base_features = base_features;
    cfg.n_stages = stages;
    cfg.heads_per_stage.clear();
    cfg.depths_per_stage.clear();
    for (index_t s = 0; s < stages; ++s) {
      cfg.heads_per_stage.push_back(heads0 << s);
      cfg.depths_per_stage.push_back(depth);
    }
    cfg.proj_dim = proj_dim;
    cfg.dropout_rate = dropout;
    cfg.input_size = subvolume;
    return cfg;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  cmd->add_option("--base-features", mf.base_features, "encoder base feature count");
  cmd->add_option("--stages", mf.stages, "number of encoder stages");
  cmd->add_option("--depth", mf.depth, "transformer blocks per stage");
  cmd->add_option("--heads0", mf.heads0, "attention heads in the first stage (doubles per stage)");
  cmd->add_option("--subvolume", mf.subvolume, "training block edge length");
  cmd->add_option("--proj-dim", mf.proj_dim, "contrastive projection width");
  cmd->add_option("--dropout", mf.dropout, "dropout rate inside transformer blocks");
}

Dataset load_dataset(const std::string& manifest, bool normalize) {
  Dataset data;
  for (auto& s : load_samples(manifest, normalize)) {
    if (s.labeled)
      data.labeled.push_back(std::move(s));
    else
      data.unlabeled.push_back(std::move(s));
  }
  return data;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IOError("cannot write " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string out_dir = "phantoms";
  int count = 14;
  int labeled = -1;  // -1: all labeled
  std::uint64_t seed = 0;
  index_t extent = 48;
  int lesions_min = 3, lesions_max = 6;
  double radius_min = 2.0, radius_max = 4.0;
  double texture = 8.0;
};

int cmd_phantom(const PhantomArgs& a) {
  const std::string out = resolve_out(a.out_dir);
  ensure_dir(out);
  Manifest manifest;
  for (int i = 0; i < a.count; ++i) {
    PhantomSpec spec;
    spec.extent = {a.extent, a.extent, a.extent};
    spec.n_lesions = {a.lesions_min, a.lesions_max};
    spec.lesion_radius = {a.radius_min, a.radius_max};
    spec.background_texture = a.texture;
    spec.seed = a.seed + static_cast<std::uint64_t>(i);
    const Sample<float> s = generate_phantom<float>(spec);
    ManifestEntry e;
    e.subject_id = s.subject_id;
    e.t1_path = s.subject_id + "_t1.nii.gz";
    e.flair_path = s.subject_id + "_flair.nii.gz";
    e.mask_path = s.subject_id + "_mask.nii.gz";
    e.labeled = a.labeled < 0 || i < a.labeled;
    write_nifti((fs::path(out) / e.t1_path).string(), s.t1);
    write_nifti((fs::path(out) / e.flair_path).string(), s.flair);
    write_nifti((fs::path(out) / *e.mask_path).string(), *s.lesion_mask);
    manifest.subjects.push_back(std::move(e));
  }
  const std::string mpath = (fs::path(out) / "manifest.json").string();
  write_manifest(mpath, manifest);
  std::cout << "wrote " << a.count << " phantoms to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string manifest;
  std::string out_dir = "pretrain_out";
  ModelFlags model;
  double lr = 1e-4, momentum = 0.0;
  double lambda_rot = 1.0, lambda_inpaint = 1.0, lambda_contrast = 1.0, temperature = 0.5;
  int steps = 1000, eval_every = 100, patience = 5, batch_subjects = 2;
  std::uint64_t seed = 0;
};

int cmd_pretrain(const PretrainArgs& a) {
  const std::string out = resolve_out(a.out_dir);
  ensure_dir(out);
  const auto samples = load_samples(a.manifest, /*normalize=*/true);

  PretrainConfig cfg;
  cfg.encoder = a.model.encoder();
  cfg.weights = {a.lambda_rot, a.lambda_inpaint, a.lambda_contrast, a.temperature};
  cfg.batch_subjects_N = a.batch_subjects;
  cfg.learning_rate = a.lr;
  cfg.momentum = a.momentum;
  cfg.max_steps = a.steps;
  cfg.eval_every = a.eval_every;
  cfg.patience = a.patience;
  cfg.seed = a.seed;
  cfg.subvolume_size = a.model.subvolume;

  const std::string ckpt = (fs::path(out) / "pretrain_best.ckpt").string();
  const PretrainReport report = run_pretraining(samples, cfg, ckpt);

  std::ofstream losses((fs::path(out) / "pretrain_losses.csv").string(), std::ios::trunc);
  losses << "step,rot,inpaint,contrast,total\n";
  for (const auto& s : report.steps)
    losses << s.step << "," << s.rot << "," << s.inpaint << "," << s.contrast << "," << s.total
           << "\n";
  std::ofstream evalcsv((fs::path(out) / "pretrain_eval.csv").string(), std::ios::trunc);
  evalcsv << "step,eval_l1\n";
  for (const auto& [step, l1] : report.eval_l1) evalcsv << step << "," << l1 << "\n";

  json j;
  j["best_step"] = report.best_step;
  j["best_eval_l1"] = report.best_l1;
  j["stopped_early"] = report.stopped_early;
  j["checkpoint"] = ckpt;
  j["steps_run"] = report.steps.size();
  write_json_file((fs::path(out) / "pretrain_report.json").string(), j);
  std::cout << "pretraining done: best step " << report.best_step << ", eval L1 " << report.best_l1
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneArgs {
  std::string manifest;
  std::string out_dir = "finetune_out";
  std::string strategy = "cps";
  std::string init_checkpoint;
  ModelFlags model;
  double lr = 1e-4, momentum = 0.0;
  double lambda_semi = 1.0, ema_decay = 0.99, mt_noise = 0.1, tau = 0.95, weak_sigma = 0.05;
  double uamt_h_start = 0.75, adv_weight = 1.0;
  int uamt_passes = 8;
  int steps = 100, eval_every = 0, holdout = 0;
  int labeled_per_step = 1, subvols_per_subject = 2;
  std::uint64_t seed = 0;
};

FinetuneConfig make_finetune_config(const FinetuneArgs& a) {
  FinetuneConfig cfg;
  cfg.strategy = strategy_from_name(a.strategy);
  cfg.encoder = a.model.encoder();
  cfg.weights.lambda_semi = a.lambda_semi;
  cfg.weights.ema_decay = a.ema_decay;
  cfg.weights.mt_noise_sigma = a.mt_noise;
  cfg.weights.fixmatch_tau = a.tau;
  cfg.weights.fixmatch_weak_sigma = a.weak_sigma;
  cfg.weights.uamt_passes = a.uamt_passes;
  cfg.weights.uamt_h_start = a.uamt_h_start;
  cfg.weights.adversarial_weight = a.adv_weight;
  cfg.learning_rate = a.lr;
  cfg.momentum = a.momentum;
  cfg.labeled_per_step = a.labeled_per_step;
  cfg.unlabeled_per_step = a.labeled_per_step;
  cfg.subvols_per_subject = a.subvols_per_subject;
  cfg.subvolume_size = a.model.subvolume;
  cfg.max_steps = a.steps;
  cfg.eval_every = a.eval_every;
  cfg.seed = a.seed;
  if (!a.init_checkpoint.empty()) cfg.init_checkpoint = a.init_checkpoint;
  return cfg;
}

int cmd_finetune(const FinetuneArgs& a) {
  const std::string out = resolve_out(a.out_dir);
  ensure_dir(out);
  Dataset data = load_dataset(a.manifest, true);
  if (data.labeled.empty()) throw ConfigError("manifest has no labeled subjects");

  std::vector<const Sample<float>*> labeled, unlabeled, validation;
  const int holdout = std::min<int>(a.holdout, static_cast<int>(data.labeled.size()) - 1);
  for (std::size_t i = 0; i < data.labeled.size(); ++i) {
    if (static_cast<int>(i) >= static_cast<int>(data.labeled.size()) - holdout)
      validation.push_back(&data.labeled[i]);
    else
      labeled.push_back(&data.labeled[i]);
  }
  for (const auto& s : data.unlabeled) unlabeled.push_back(&s);

  const FinetuneConfig cfg = make_finetune_config(a);
  auto result = run_finetune<float>(labeled, unlabeled, cfg, validation);

  const std::string ckpt = (fs::path(out) / ("finetune_" + a.strategy + ".ckpt")).string();
  save_checkpoint(result.inference_model(), ckpt, "finetune", cfg.max_steps);
  if (result.state.net2)
    save_checkpoint(*result.state.net2, (fs::path(out) / ("finetune_" + a.strategy + "_net2.ckpt")).string(),
                    "finetune", cfg.max_steps);

  std::ofstream losses((fs::path(out) / "finetune_losses.csv").string(), std::ios::trunc);
  losses << "step,sup1,unsup1,total1,sup2,unsup2,total2\n";
  for (const auto& s : result.report.steps)
    losses << s.step << "," << s.sup1 << "," << s.unsup1 << "," << s.total1 << "," << s.sup2 << ","
           << s.unsup2 << "," << s.total2 << "\n";

  json j;
  j["strategy"] = a.strategy;
  j["checkpoint"] = ckpt;
  j["steps_run"] = result.report.steps.size();
  if (!result.report.eval_dice.empty()) {
    json curve = json::array();
    for (const auto& [step, dice] : result.report.eval_dice) curve.push_back({{"step", step}, {"dice", dice}});
    j["eval_dice"] = curve;
  }
  write_json_file((fs::path(out) / "finetune_report.json").string(), j);
  std::cout << "finetuning done: " << result.report.steps.size() << " steps, checkpoint " << ckpt
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string t1, flair, mask;
  std::string checkpoint;
  std::string out = "prediction.nii.gz";
  std::string overlay;
  index_t window = 96;
  index_t overlap = 24;
  double threshold = 0.5;
  bool no_normalize = false;
};

int cmd_predict(const PredictArgs& a) {
  Sample<float> s;
  s.subject_id = "subject";
  s.t1 = read_nifti(a.t1, Modality::T1w);
  s.flair = read_nifti(a.flair, Modality::FLAIR);
  if (!a.no_normalize) {
    s.t1 = normalize_intensity(s.t1);
    s.flair = normalize_intensity(s.flair);
  }
  if (!a.mask.empty()) {
    s.lesion_mask = read_nifti(a.mask, Modality::Mask);
    s.labeled = true;
  }
  s.validate();

  const CheckpointHeader header = read_checkpoint_header(a.checkpoint);
  auto model = build_model<float>(header.config, false, true, 0);
  load_checkpoint_into(*model, a.checkpoint);

  InferenceConfig icfg;
  icfg.window = a.window;
  icfg.overlap = a.overlap;
  icfg.threshold = a.threshold;

  const Volume<float> prob = sliding_window_predict(model_predictor(*model), s, icfg);
  const std::string out = resolve_out(a.out);
  if (const auto dir = fs::path(out).parent_path(); !dir.empty()) ensure_dir(dir.string());
  write_nifti(out, prob);
  std::cout << "wrote probability volume " << out << "\n";

  if (s.lesion_mask) {
    const double dice = dice_score(threshold_volume(prob, icfg.threshold), *s.lesion_mask);
    std::cout << "dice vs mask: " << dice << "\n";
    if (!a.overlay.empty()) {
      const std::string ov = resolve_out(a.overlay);
      render_overlay_png(ov, s.flair, *s.lesion_mask, threshold_volume(prob, icfg.threshold));
      std::cout << "wrote overlay " << ov << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string manifest;
  std::string out_dir = "experiment_out";
  std::string protocol = "crossval";
  std::string methods;  // comma-separated labels; empty = defaults
  std::string pretrained;
  ModelFlags model;
  double lr = 1e-4;
  double lambda_semi = 1.0;
  int steps = 100;
  int folds = 7;
  std::vector<int> budgets{3, 5, 10};
  std::vector<double> levels{0.1, 0.2, 0.5, 1.0};
  index_t overlap = 24;
  std::uint64_t seed = 0;
};

int cmd_experiment(const ExperimentArgs& a) {
  const std::string out = resolve_out(a.out_dir);
  ensure_dir(out);
  Dataset data = load_dataset(a.manifest, true);

  ExperimentSpec spec;
  spec.protocol = protocol_from_name(a.protocol);
  if (!a.methods.empty()) {
    std::stringstream ss(a.methods);
    std::string item;
    while (std::getline(ss, item, ',')) spec.methods.push_back(method_from_label(item));
  }
  spec.budgets = a.budgets;
  spec.sparsity_levels = a.levels;
  spec.folds = a.folds;
  spec.seed = a.seed;
  if (!a.pretrained.empty()) spec.pretrain_checkpoint = a.pretrained;
  spec.train.encoder = a.model.encoder();
  spec.train.subvolume_size = a.model.subvolume;
  spec.train.learning_rate = a.lr;
  spec.train.weights.lambda_semi = a.lambda_semi;
  spec.train.max_steps = a.steps;
  spec.train.seed = a.seed;
  spec.inference.window = a.model.subvolume;
  spec.inference.overlap = std::min(a.overlap, a.model.subvolume / 2);

  const ResultsTable table = run_experiment(data, spec);
  const std::string base = "results_" + a.protocol;
  write_results_csv((fs::path(out) / (base + ".csv")).string(), table);
  write_results_json((fs::path(out) / (base + ".json")).string(), table);
  std::cout << "experiment " << a.protocol << " done: " << table.methods.size() << " methods x "
            << table.settings.size() << " settings -> " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string results_dir;
  std::string out_dir;  // defaults to results_dir
};

int cmd_report(const ReportArgs& a) {
  const std::string results = resolve_out(a.results_dir);
  const std::string out = resolve_out(a.out_dir.empty() ? a.results_dir : a.out_dir);
  ensure_dir(out);

  std::vector<fs::path> jsons, csvs;
  if (fs::exists(results))
    for (const auto& entry : fs::directory_iterator(results)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("results_", 0) == 0 && entry.path().extension() == ".json")
        jsons.push_back(entry.path());
      if (name.rfind("results_", 0) == 0 && entry.path().extension() == ".csv")
        csvs.push_back(entry.path());
    }
  std::sort(jsons.begin(), jsons.end());
  std::sort(csvs.begin(), csvs.end());
  if (jsons.empty() && csvs.empty()) throw NoResults("no results_*.csv or results_*.json in " + results);

  std::ofstream md((fs::path(out) / "summary.md").string(), std::ios::trunc);
  md << "# Results summary\n";

  auto emit_table = [&](const ResultsTable& t, const std::string& origin) {
    md << "\n## " << t.protocol << " (" << origin << ")\n\n";
    md << "| method |";
    for (const auto& s : t.settings) md << " " << s << " |";
    md << " mean | std |\n|---|";
    for (std::size_t i = 0; i < t.settings.size() + 2; ++i) md << "---|";
    md << "\n";
    for (std::size_t r = 0; r < t.methods.size(); ++r) {
      md << "| " << t.methods[r] << " |";
      char buf[64];
      for (std::size_t c = 0; c < t.settings.size(); ++c) {
        if (t.values[r][c].size() > 1)
          std::snprintf(buf, sizeof(buf), " %.4f±%.4f |", t.cell_mean(r, c), t.cell_std(r, c));
        else
          std::snprintf(buf, sizeof(buf), " %.4f |", t.cell_mean(r, c));
        md << buf;
      }
      const auto pooled = t.row_values(r);
      double mean = 0;
      for (double v : pooled) mean += v;
      mean /= pooled.empty() ? 1.0 : static_cast<double>(pooled.size());
      double var = 0;
      for (double v : pooled) var += (v - mean) * (v - mean);
      const double sd = pooled.size() > 1 ? std::sqrt(var / static_cast<double>(pooled.size())) : 0.0;
      std::snprintf(buf, sizeof(buf), " %.4f | %.4f |\n", mean, sd);
      md << buf;
    }

    // one box plot per setting column, one box per method
    for (std::size_t c = 0; c < t.settings.size(); ++c) {
      std::vector<std::vector<double>> groups;
      bool any = false;
      for (std::size_t r = 0; r < t.methods.size(); ++r) {
        groups.push_back(t.values[r][c]);
        any = any || !t.values[r][c].empty();
      }
      if (!any) continue;
      std::string setting = t.settings[c];
      for (auto& ch : setting)
        if (ch == '%' || ch == ' ' || ch == '/') ch = '_';
      const std::string svg = "boxplot_" + t.protocol + "_" + setting + ".svg";
      render_boxplot_svg((fs::path(out) / svg).string(), t.protocol + " @ " + t.settings[c],
                         t.methods, groups);
      md << "\n![" << t.protocol << " " << t.settings[c] << "](" << svg << ")\n";
    }
  };

  // prefer JSON (full per-fold data); fall back to CSV parsing
  std::vector<std::string> seen;
  for (const auto& p : jsons) {
    std::ifstream f(p);
    json j;
    f >> j;
    ResultsTable t;
    t.protocol = j.at("protocol").get<std::string>();
    t.methods = j.at("methods").get<std::vector<std::string>>();
    t.settings = j.at("settings").get<std::vector<std::string>>();
    t.values = j.at("values").get<std::vector<std::vector<std::vector<double>>>>();
    emit_table(t, p.filename().string());
    seen.push_back(p.stem().string());
  }
  for (const auto& p : csvs) {
    if (std::find(seen.begin(), seen.end(), p.stem().string()) != seen.end()) continue;
    emit_table(read_results_csv(p.string()), p.filename().string());
  }
  std::cout << "wrote summary to " << (fs::path(out) / "summary.md").string() << "\n";
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"SSL^2: limited-supervision 3D lesion segmentation framework"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file with [command] sections");

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom corpus");
  phantom->add_option("--out", pa.out_dir, "output directory");
  phantom->add_option("--count", pa.count, "number of phantoms");
  phantom->add_option("--labeled", pa.labeled, "how many subjects keep their labels (-1: all)");
  phantom->add_option("--seed", pa.seed, "base seed");
  phantom->add_option("--extent", pa.extent, "cubic extent in voxels");
  phantom->add_option("--lesions-min", pa.lesions_min, "minimum lesion count");
  phantom->add_option("--lesions-max", pa.lesions_max, "maximum lesion count");
  phantom->add_option("--radius-min", pa.radius_min, "minimum lesion semi-axis (voxels)");
  phantom->add_option("--radius-max", pa.radius_max, "maximum lesion semi-axis (voxels)");
  phantom->add_option("--texture", pa.texture, "background texture cell size");

  PretrainArgs ra;
  auto* pretrain = app.add_subcommand("pretrain", "self-supervised pre-training");
  pretrain->add_option("--manifest", ra.manifest, "dataset manifest")->required();
  pretrain->add_option("--out", ra.out_dir, "output directory");
  add_model_flags(pretrain, ra.model);
  pretrain->add_option("--lr", ra.lr, "learning rate");
  pretrain->add_option("--momentum", ra.momentum, "SGD momentum");
  pretrain->add_option("--lambda-rot", ra.lambda_rot, "rotation loss weight");
  pretrain->add_option("--lambda-inpaint", ra.lambda_inpaint, "inpainting loss weight");
  pretrain->add_option("--lambda-contrast", ra.lambda_contrast, "contrastive loss weight");
  pretrain->add_option("--temperature", ra.temperature, "contrastive temperature");
  pretrain->add_option("--steps", ra.steps, "max optimizer steps");
  pretrain->add_option("--eval-every", ra.eval_every, "evaluation interval");
  pretrain->add_option("--patience", ra.patience, "non-improving evals before stopping");
  pretrain->add_option("--batch-subjects", ra.batch_subjects, "subjects per contrastive batch");
  pretrain->add_option("--seed", ra.seed, "seed");

  FinetuneArgs fa;
  auto* finetune = app.add_subcommand("finetune", "semi-supervised fine-tuning");
  finetune->add_option("--manifest", fa.manifest, "dataset manifest")->required();
  finetune->add_option("--out", fa.out_dir, "output directory");
  finetune->add_option("--strategy", fa.strategy,
                       "fully_supervised|mean_teacher|entropy_min|adversarial|uamt|fixmatch|cps");
  finetune->add_option("--init-checkpoint", fa.init_checkpoint, "pre-trained encoder checkpoint");
  add_model_flags(finetune, fa.model);
  finetune->add_option("--lr", fa.lr, "learning rate");
  finetune->add_option("--momentum", fa.momentum, "SGD momentum");
  finetune->add_option("--lambda-semi", fa.lambda_semi, "unsupervised loss weight");
  finetune->add_option("--ema-decay", fa.ema_decay, "teacher EMA decay");
  finetune->add_option("--mt-noise-sigma", fa.mt_noise, "Mean Teacher input noise sigma");
  finetune->add_option("--fixmatch-tau", fa.tau, "FixMatch confidence threshold");
  finetune->add_option("--fixmatch-weak-sigma", fa.weak_sigma, "FixMatch weak noise sigma");
  finetune->add_option("--uamt-passes", fa.uamt_passes, "UAMT stochastic teacher passes");
  finetune->add_option("--uamt-h-start", fa.uamt_h_start, "UAMT threshold ramp start (x ln2)");
  finetune->add_option("--adv-weight", fa.adv_weight, "adversarial generator weight");
  finetune->add_option("--steps", fa.steps, "optimizer steps");
  finetune->add_option("--eval-every", fa.eval_every, "validation interval (0: off)");
  finetune->add_option("--holdout", fa.holdout, "labeled subjects held out for validation");
  finetune->add_option("--labeled-per-step", fa.labeled_per_step, "labeled subjects per step");
  finetune->add_option("--subvols-per-subject", fa.subvols_per_subject, "sub-volumes per subject");
  finetune->add_option("--seed", fa.seed, "seed");

  PredictArgs da;
  auto* predict = app.add_subcommand("predict", "sliding-window whole-volume inference");
  predict->add_option("--t1", da.t1, "T1w NIfTI path")->required();
  predict->add_option("--flair", da.flair, "FLAIR NIfTI path")->required();
  predict->add_option("--mask", da.mask, "optional ground-truth mask (reports Dice)");
  predict->add_option("--checkpoint", da.checkpoint, "fine-tuned model checkpoint")->required();
  predict->add_option("--out", da.out, "output probability NIfTI path");
  predict->add_option("--overlay", da.overlay, "optional overlay PNG path (requires --mask)");
  predict->add_option("--window", da.window, "window edge");
  predict->add_option("--overlap", da.overlap, "window overlap");
  predict->add_option("--threshold", da.threshold, "binarization threshold");
  predict->add_flag("--no-normalize", da.no_normalize, "skip intensity normalization");

  ExperimentArgs ea;
  auto* experiment = app.add_subcommand("experiment", "cross-validation and label-budget protocols");
  experiment->add_option("--manifest", ea.manifest, "dataset manifest")->required();
  experiment->add_option("--out", ea.out_dir, "output directory");
  experiment->add_option("--protocol", ea.protocol, "crossval|train_size|sparse");
  experiment->add_option("--methods", ea.methods, "comma-separated method labels (default per protocol)");
  experiment->add_option("--pretrained", ea.pretrained, "pre-trained encoder checkpoint");
  add_model_flags(experiment, ea.model);
  experiment->add_option("--lr", ea.lr, "learning rate");
  experiment->add_option("--lambda-semi", ea.lambda_semi, "unsupervised loss weight");
  experiment->add_option("--steps", ea.steps, "training steps per run");
  experiment->add_option("--folds", ea.folds, "cross-validation folds");
  experiment->add_option("--budgets", ea.budgets, "labeled budgets (train_size)")->delimiter(',');
  experiment->add_option("--levels", ea.levels, "sparsity levels (sparse)")->delimiter(',');
  experiment->add_option("--overlap", ea.overlap, "inference window overlap");
  experiment->add_option("--seed", ea.seed, "seed");

  ReportArgs ta;
  auto* report = app.add_subcommand("report", "summarize results and render box plots");
  report->add_option("--results", ta.results_dir, "directory with results_*.csv/json")->required();
  report->add_option("--out", ta.out_dir, "output directory (default: results dir)");

  for (CLI::App* sc : {phantom, pretrain, finetune, predict, experiment, report}) sc->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    json err{{"error", "config"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  }

  try {
    if (*phantom) return cmd_phantom(pa);
    if (*pretrain) return cmd_pretrain(ra);
    if (*finetune) return cmd_finetune(fa);
    if (*predict) return cmd_predict(da);
    if (*experiment) return cmd_experiment(ea);
    if (*report) return cmd_report(ta);
    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    json err{{"error", "config"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const BadConfig& e) {
    json err{{"error", "config"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    json err{{"error", "runtime"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 3;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace ssl2
