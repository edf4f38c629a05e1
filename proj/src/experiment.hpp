#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evaluation.hpp"
#include "training.hpp"

namespace haca {

struct BindingGenConfig {
  int tests_per_category = 120;
  int val_tests_per_category = 24;
  std::vector<CorruptionKind> categories;  // defaults to all seven kinds

  BindingGenConfig();
};

struct RetrievalGenConfig {
  std::string name;
  int queries = 18;
  int relevant_per_query = 12;
  int candidates = 216;
  int events_per_query = 1;
};

struct EvalConfig {
  int correction_items = 210;
};

struct ExperimentConfig {
  uint64_t seed = 42;
  int n_seeds = 3;
  GenConfig generation;
  BindingGenConfig binding;
  std::vector<RetrievalGenConfig> retrieval;  // defaults: temporal 18x12/216, events 12x8/120
  ObjectiveConfig objective;
  TrainConfig train;
  ModelConfig model;  // vocabulary sizes are derived from the lexicon
  EvalConfig eval;

  static ExperimentConfig defaults();
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string to_json_text() const;

  // FNV-64 over the canonical JSON, hex-encoded.
  std::string config_hash() const;
  std::string generation_hash() const;  // generation + binding + retrieval subtrees
};

std::string hash_file_hex(const std::string& path);

struct DataManifest {
  std::string generation_hash;
  std::string config_hash;
  std::string dataset_hash;  // combined hash over all data files
  std::vector<std::pair<std::string, std::string>> files;  // name -> content hash
  std::vector<std::pair<std::string, int>> counts;

  static DataManifest load(const std::string& path);
  void save(const std::string& path) const;
};

// gen-data: corpus + binding test sets + retrieval tasks + manifest, all under
// out_dir together with the resolved config.
void pipeline_gen_data(const ExperimentConfig& config, const std::string& out_dir);

struct TrainRunPaths {
  std::string checkpoint;
  std::string report;
  std::string config;
};

// train: reads datasets from data_dir (config defaults to the stored copy),
// writes checkpoint + report + resolved config under out_dir. Throws
// ErrorCode::Training after writing artifacts when the run diverged.
TrainRunPaths pipeline_train(const std::optional<std::string>& config_path,
                             const std::string& data_dir, const std::string& objective_name,
                             std::optional<double> mask_ratio, std::optional<uint64_t> seed,
                             const std::string& out_dir, bool dump_text,
                             const ProgressFn& progress);

// eval: refuses checkpoints whose dataset hash does not match data_dir.
std::string pipeline_eval(const std::string& checkpoint_path, const std::string& data_dir,
                          const std::string& out_dir,
                          const std::optional<std::string>& scores_out);

// ablate-mask: one haca+mask run per (ratio, seed) over shared data.
std::string pipeline_ablate_mask(const std::optional<std::string>& config_path,
                                 const std::string& data_dir, std::span<const double> ratios,
                                 const std::string& out_dir, const ProgressFn& progress);

// compare: per-category deltas of each report vs the first; refuses reports
// over different test sets.
std::string pipeline_compare(std::span<const std::string> report_paths,
                             const std::string& out_dir);

}  // namespace haca
