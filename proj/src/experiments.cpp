#include "ssl2/eval/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ssl2 {

MethodSpec method_from_label(const std::string& label) {
  MethodSpec m;
  std::string base = label;
  const std::string suffix = "+pretrain";
  if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    m.use_pretrain = true;
    base = base.substr(0, base.size() - suffix.size());
  }
  m.strategy = strategy_from_name(base);
  return m;
}

std::vector<MethodSpec> default_methods(Protocol p) {
  if (p == Protocol::CrossVal) {
    // the seven rows of the strategy-comparison table
    return {{Strategy::FullySupervised, false}, {Strategy::MeanTeacher, false},
            {Strategy::EntropyMin, false},      {Strategy::Adversarial, false},
            {Strategy::Uamt, false},            {Strategy::FixMatch, false},
            {Strategy::Cps, false}};
  }
  // the six rows of the label-budget / sparse tables
  return {{Strategy::FullySupervised, false}, {Strategy::FullySupervised, true},
          {Strategy::MeanTeacher, false},     {Strategy::Cps, false},
          {Strategy::MeanTeacher, true},      {Strategy::Cps, true}};
}

void ExperimentSpec::validate() const {
  train.validate();
  inference.validate();
  if (folds < 2) throw ConfigError("experiment folds must be >= 2");
  for (int b : budgets)
    if (b < 1) throw ConfigError("budgets must be >= 1");
  for (double l : sparsity_levels)
    if (!(l > 0.0 && l <= 1.0)) throw ConfigError("sparsity levels must be in (0,1]");
  const auto used = methods.empty() ? default_methods(protocol) : methods;
  for (const auto& m : used)
    if (m.use_pretrain && !pretrain_checkpoint)
      throw ConfigError("method " + m.label() + " requires a pretrain checkpoint (pretrain_checkpoint)");
}

double ResultsTable::cell_mean(std::size_t r, std::size_t c) const {
  const auto& v = values[r][c];
  double acc = 0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double ResultsTable::cell_std(std::size_t r, std::size_t c) const {
  const auto& v = values[r][c];
  if (v.size() < 2) return 0.0;
  const double m = cell_mean(r, c);
  double acc = 0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

std::vector<double> ResultsTable::row_values(std::size_t r) const {
  std::vector<double> out;
  for (const auto& cell : values[r]) out.insert(out.end(), cell.begin(), cell.end());
  return out;
}

std::vector<std::uint8_t> select_labeled_slices(index_t n_slices, double level, std::uint64_t seed,
                                                const std::string& subject_id) {
  if (!(level > 0.0 && level <= 1.0)) throw ConfigError("sparsity level must be in (0,1]");
  const auto want = static_cast<index_t>(std::floor(level * static_cast<double>(n_slices) + 1e-9));
  std::vector<index_t> order(static_cast<std::size_t>(n_slices));
  for (index_t i = 0; i < n_slices; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "slices:" + subject_id));
  rng.shuffle(order);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n_slices), 0);
  for (index_t i = 0; i < want; ++i) out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return out;
}

namespace {

using SamplePtrs = std::vector<const Sample<float>*>;

std::map<std::string, const Sample<float>*> index_by_id(const std::vector<Sample<float>>& samples) {
  std::map<std::string, const Sample<float>*> out;
  for (const auto& s : samples) out.emplace(s.subject_id, &s);
  return out;
}

double mean_test_dice(SegModel<float>& model, const SamplePtrs& test, const InferenceConfig& icfg) {
  double acc = 0;
  for (const auto* s : test) acc += evaluate_dice(model, *s, icfg);
  return acc / static_cast<double>(test.size());
}

FinetuneConfig method_config(const ExperimentSpec& spec, const MethodSpec& m, std::uint64_t run_seed) {
  FinetuneConfig cfg = spec.train;
  cfg.strategy = m.strategy;
  cfg.seed = run_seed;
  cfg.init_checkpoint = m.use_pretrain ? spec.pretrain_checkpoint : std::nullopt;
  if (!cfg.is_semi()) cfg.unlabeled_per_step = cfg.labeled_per_step;
  return cfg;
}

}  // namespace

ResultsTable run_crossval(const Dataset& data, const std::vector<MethodSpec>& methods, int k,
                          const ExperimentSpec& spec) {
  if (static_cast<int>(data.labeled.size()) < k)
    throw TooFewSubjects("run_crossval: fewer labeled subjects than folds");
  const auto by_id = index_by_id(data.labeled);
  std::vector<std::string> ids;
  for (const auto& s : data.labeled) ids.push_back(s.subject_id);
  Rng fold_rng(derive_seed(spec.seed, "folds"));
  const auto folds = make_folds(ids, k, fold_rng);

  SamplePtrs unlabeled;
  for (const auto& s : data.unlabeled) unlabeled.push_back(&s);

  ResultsTable table;
  table.protocol = protocol_name(Protocol::CrossVal);
  for (const auto& m : methods) table.methods.push_back(m.label());
  for (int f = 0; f < k; ++f) table.settings.push_back("fold_" + std::to_string(f + 1));
  table.values.assign(methods.size(), std::vector<std::vector<double>>(static_cast<std::size_t>(k)));

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (int f = 0; f < k; ++f) {
      const auto& fold = folds[static_cast<std::size_t>(f)];
      SamplePtrs train, test;
      for (const auto& id : fold.train_ids) train.push_back(by_id.at(id));
      for (const auto& id : fold.test_ids) test.push_back(by_id.at(id));
      FinetuneConfig cfg =
          method_config(spec, methods[mi], derive_seed(spec.seed, "fold" + std::to_string(f)));
      auto result = run_finetune<float>(train, unlabeled, cfg);
      table.values[mi][static_cast<std::size_t>(f)].push_back(
          mean_test_dice(result.inference_model(), test, spec.inference));
    }
  }
  return table;
}

ResultsTable run_train_size(const Dataset& data, const std::vector<int>& budgets,
                            const std::vector<MethodSpec>& methods, const ExperimentSpec& spec) {
  const auto by_id = index_by_id(data.labeled);
  std::vector<std::string> ids;
  for (const auto& s : data.labeled) ids.push_back(s.subject_id);
  Rng fold_rng(derive_seed(spec.seed, "folds"));
  const auto folds = make_folds(ids, spec.folds, fold_rng);
  for (int b : budgets)
    if (b > static_cast<int>(folds[0].train_ids.size()))
      throw ConfigError("budget exceeds per-fold training size");

  ResultsTable table;
  table.protocol = protocol_name(Protocol::TrainSize);
  for (const auto& m : methods) table.methods.push_back(m.label());
  for (int b : budgets) table.settings.push_back(std::to_string(b));
  table.values.assign(methods.size(), std::vector<std::vector<double>>(budgets.size()));

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
      for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& fold = folds[f];
        const int budget = budgets[bi];
        SamplePtrs train_labeled, pool, test;
        for (std::size_t i = 0; i < fold.train_ids.size(); ++i) {
          const Sample<float>* s = by_id.at(fold.train_ids[i]);
          if (static_cast<int>(i) < budget)
            train_labeled.push_back(s);
          else
            pool.push_back(s);  // re-pooled as unlabeled
        }
        for (const auto& s : data.unlabeled) pool.push_back(&s);
        for (const auto& id : fold.test_ids) test.push_back(by_id.at(id));

        FinetuneConfig cfg =
            method_config(spec, methods[mi], derive_seed(spec.seed, "fold" + std::to_string(f)));
        auto result = run_finetune<float>(train_labeled, pool, cfg);
        table.values[mi][bi].push_back(mean_test_dice(result.inference_model(), test, spec.inference));
      }
    }
  }
  return table;
}

ResultsTable run_sparse(const Dataset& data, const std::vector<double>& levels,
                        const std::vector<MethodSpec>& methods, const ExperimentSpec& spec) {
  if (data.labeled.size() < 3) throw TooFewSubjects("run_sparse: need at least 3 labeled subjects");
  std::vector<std::string> ids;
  for (const auto& s : data.labeled) ids.push_back(s.subject_id);
  Rng rng(derive_seed(spec.seed, "sparse_test"));
  rng.shuffle(ids);
  const std::vector<std::string> test_ids(ids.begin(), ids.begin() + 2);  // fixed 2-subject test set
  const auto by_id = index_by_id(data.labeled);

  ResultsTable table;
  table.protocol = protocol_name(Protocol::Sparse);
  for (const auto& m : methods) table.methods.push_back(m.label());
  for (double l : levels) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g%%", l * 100.0);
    table.settings.push_back(buf);
  }
  table.values.assign(methods.size(), std::vector<std::vector<double>>(levels.size()));

  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    // sparse copies of the training subjects
    std::vector<Sample<float>> sparse_train;
    for (const auto& s : data.labeled) {
      if (std::find(test_ids.begin(), test_ids.end(), s.subject_id) != test_ids.end()) continue;
      Sample<float> c = s;
      c.labeled_slices = select_labeled_slices(c.extent()[2], level, spec.seed, c.subject_id);
      sparse_train.push_back(std::move(c));
    }
    // unlabeled slices of the training volumes join the unlabeled cohort
    SamplePtrs pool;
    for (const auto& s : data.unlabeled) pool.push_back(&s);
    std::vector<Sample<float>> train_as_unlabeled;
    if (level < 1.0) {
      for (const auto& s : sparse_train) {
        Sample<float> u = s;
        u.lesion_mask.reset();
        u.labeled_slices.reset();
        u.labeled = false;
        train_as_unlabeled.push_back(std::move(u));
      }
      for (const auto& s : train_as_unlabeled) pool.push_back(&s);
    }
    SamplePtrs train, test;
    for (const auto& s : sparse_train) train.push_back(&s);
    for (const auto& id : test_ids) test.push_back(by_id.at(id));

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      FinetuneConfig cfg =
          method_config(spec, methods[mi], derive_seed(spec.seed, "level" + std::to_string(li)));
      auto result = run_finetune<float>(train, pool, cfg);
      table.values[mi][li].push_back(mean_test_dice(result.inference_model(), test, spec.inference));
    }
  }
  return table;
}

ResultsTable run_experiment(const Dataset& data, const ExperimentSpec& spec) {
  spec.validate();
  const auto methods = spec.methods.empty() ? default_methods(spec.protocol) : spec.methods;
  switch (spec.protocol) {
    case Protocol::CrossVal: return run_crossval(data, methods, spec.folds, spec);
    case Protocol::TrainSize: return run_train_size(data, spec.budgets, methods, spec);
    case Protocol::Sparse: return run_sparse(data, spec.sparsity_levels, methods, spec);
  }
  throw ConfigError("bad protocol");
}

}  // namespace ssl2
