#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssl2/eval/sliding_window.hpp"
#include "ssl2/train/finetune.hpp"
#include "ssl2/volume/volume.hpp"

namespace ssl2 {

enum class Protocol { CrossVal, TrainSize, Sparse };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::CrossVal: return "crossval";
    case Protocol::TrainSize: return "train_size";
    case Protocol::Sparse: return "sparse";
  }
  return "?";
}

inline Protocol protocol_from_name(const std::string& s) {
  for (Protocol p : {Protocol::CrossVal, Protocol::TrainSize, Protocol::Sparse})
    if (s == protocol_name(p)) return p;
  throw ConfigError("unknown protocol: " + s);
}

// A method row: strategy, optionally initialized from the pre-trained encoder.
struct MethodSpec {
  Strategy strategy = Strategy::FullySupervised;
  bool use_pretrain = false;

  std::string label() const {
    std::string s = strategy_name(strategy);
    if (use_pretrain) s += "+pretrain";
    return s;
  }
};

MethodSpec method_from_label(const std::string& label);
std::vector<MethodSpec> default_methods(Protocol p);

struct ExperimentSpec {
  Protocol protocol = Protocol::CrossVal;
  std::vector<MethodSpec> methods;  // empty -> default_methods(protocol)
  std::vector<int> budgets{3, 5, 10};
  std::vector<double> sparsity_levels{0.1, 0.2, 0.5, 1.0};
  int folds = 7;
  std::uint64_t seed = 0;
  std::optional<std::string> pretrain_checkpoint;
  FinetuneConfig train;  // per-method strategy/seed/checkpoint are overridden
  InferenceConfig inference;

  void validate() const;
};

// Rows are methods, columns are folds (crossval) or settings (budgets,
// sparsity levels); each cell holds the per-fold Dice values it aggregates.
struct ResultsTable {
  std::string protocol;
  std::vector<std::string> methods;
  std::vector<std::string> settings;
  std::vector<std::vector<std::vector<double>>> values;

  double cell_mean(std::size_t r, std::size_t c) const;
  double cell_std(std::size_t r, std::size_t c) const;
  std::vector<double> row_values(std::size_t r) const;  // all folds pooled
};

struct Dataset {
  std::vector<Sample<float>> labeled;
  std::vector<Sample<float>> unlabeled;
};

// Uniformly samples floor(level * S) distinct labeled slices along axis 2,
// deterministic per (seed, subject_id).
std::vector<std::uint8_t> select_labeled_slices(index_t n_slices, double level, std::uint64_t seed,
                                                const std::string& subject_id);

ResultsTable run_crossval(const Dataset& data, const std::vector<MethodSpec>& methods, int k,
                          const ExperimentSpec& spec);
ResultsTable run_train_size(const Dataset& data, const std::vector<int>& budgets,
                            const std::vector<MethodSpec>& methods, const ExperimentSpec& spec);
ResultsTable run_sparse(const Dataset& data, const std::vector<double>& levels,
                        const std::vector<MethodSpec>& methods, const ExperimentSpec& spec);

ResultsTable run_experiment(const Dataset& data, const ExperimentSpec& spec);

// CSV/JSON emission and parsing (layouts mirror the protocol tables).
void write_results_csv(const std::string& path, const ResultsTable& table);
void write_results_json(const std::string& path, const ResultsTable& table);
ResultsTable read_results_csv(const std::string& path);

}  // namespace ssl2
