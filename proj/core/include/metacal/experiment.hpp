#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metacal/baselines.hpp"
#include "metacal/dataio.hpp"
#include "metacal/meta.hpp"
#include "metacal/metrics.hpp"
#include "metacal/nnet.hpp"

namespace metacal {

/// Window lengths in hourly samples.
struct SplitConfig {
  std::size_t support_hours = 48;
  std::size_t query_hours = 48;
  std::size_t trainval_hours = 72;
  std::size_t test_hours = 360;
  double val_fraction = 0.25;
};

/// Every hyperparameter of a run. Loaded from one JSON file; relative paths
/// in that file resolve against the file's directory.
struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "runs";
  std::vector<Method> methods{Method::B1, Method::B2, Method::B3, Method::MAML, Method::RAW};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  MlpSpec model{};
  MetaConfig meta{};
  FinetuneConfig finetune{};
  SplitConfig split{};
  /// Source used by B2; empty selects the first source of the manifest.
  std::string b2_source;
  /// Also run B2 from every source and report the per-source table.
  bool b2_all_sources = true;
  /// 0 defers to METACAL_THREADS / hardware concurrency.
  std::size_t threads = 0;

  bool uses(Method m) const;
  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

ExperimentConfig experiment_config_from_json(std::string_view text,
                                             const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct ExperimentData {
  Manifest manifest;
  std::vector<SiteDataset> sources;  // manifest order
  std::vector<SiteDataset> targets;  // manifest order
};

/// Loads every manifest site. Sources are only read by methods that use them.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// The source records a baseline may pretrain on for a given seed: the
/// support window followed by the query window drawn from that source.
std::vector<CalibrationRecord> source_pretrain_records(const SiteDataset& source, std::size_t source_index,
                                                       const SplitConfig& split, std::uint64_t seed);

struct RunRecord {
  EvalReport report;
  std::optional<NormStats> stats;  // normalization the model was evaluated under
  std::uint64_t seed = 0;
  bool ok = true;
  std::string status = "ok";
};

struct B2SourceRecord {
  std::string source_id;
  EvalReport report;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string status = "ok";
};

struct CompareResult {
  std::vector<std::string> target_ids;
  std::vector<Method> methods;  // column order, RAW always last
  std::vector<RunRecord> runs;  // ordered by (target, method, seed)
  std::vector<B2SourceRecord> b2_sources;  // ordered by (target, source, seed)

  std::size_t failed_runs() const;
};

/// Trains, adapts and evaluates every (target, method, seed). All methods
/// for one (target, seed) see the same target TaskSplit.
CompareResult run_compare(const ExperimentConfig& cfg, const ExperimentData& data);

struct MethodSummary {
  Method method;
  double mean_mae;
  double mean_mae_std;
  double mean_rmse;
  double mean_r2;
  std::size_t runs;
};

/// Means over every successful (target, seed) run of each method.
std::vector<MethodSummary> summarize(const CompareResult& result);
const MethodSummary* find_summary(const std::vector<MethodSummary>& s, Method m);

/// compare_table.csv (targets x metric/method, seed means), compare_runs.csv
/// (one row per run), compare_reports.json, b2_sources.csv and a display
/// table compare_table.txt with R^2 shown x100.
void write_compare_outputs(const CompareResult& result, const std::filesystem::path& out_dir);
std::string format_display_table(const CompareResult& result);

struct TrainMetaOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path norm_stats;  // empty with per-site normalization
  std::filesystem::path history;
};

/// Meta-trains on the manifest sources and writes meta_phi.ckpt, its
/// normalization sidecar (<checkpoint>.norm.json) and meta_history.csv.
TrainMetaOutputs run_train_meta(const ExperimentConfig& cfg, const ExperimentData& data);

std::filesystem::path norm_sidecar_path(const std::filesystem::path& checkpoint);

struct AdaptOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path report;
  EvalReport eval;
};

/// Few-shot adaptation of a meta checkpoint to one target, evaluated on the
/// target's test window.
AdaptOutputs run_adapt(const ExperimentConfig& cfg, const ExperimentData& data,
                       const std::filesystem::path& checkpoint, std::string_view target_id);

/// timestamp,raw,reference,calibrated over the target test window. With
/// `adapt` the checkpoint is first adapted on the target train window.
void run_export_series(const ExperimentConfig& cfg, const ExperimentData& data,
                       const std::filesystem::path& checkpoint, std::string_view target_id,
                       const std::filesystem::path& out_csv, bool adapt);

std::string report_to_json(const EvalReport& r);

}  // namespace metacal
