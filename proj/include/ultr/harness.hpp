#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultr/corpus.hpp"
#include "ultr/curve.hpp"
#include "ultr/eval.hpp"
#include "ultr/propensity.hpp"
#include "ultr/simulate.hpp"
#include "ultr/train.hpp"

namespace ultr {

inline constexpr const char* kToolVersion = "ultr 0.1.0";

/// Where click logs come from: either simulated from a judged set (a file or
/// the synthetic generator), or external train/validation/test logs.
struct DataConfig {
  std::optional<std::string> judged_path;
  std::optional<SyntheticJudgedConfig> synthetic;
  // Judged set used for ranking metrics; defaults to the simulation set.
  std::optional<std::string> eval_judged_path;
  std::optional<SyntheticJudgedConfig> eval_synthetic;

  UserModelConfig user_model;
  LoggingPolicy policy;
  std::size_t n_sessions = 10000;
  std::uint64_t seed = 0;  // simulation and split

  std::optional<std::string> train_log, val_log, test_log;

  std::size_t min_docs = 5;
  SplitFractions split;
  bool write_log = false;

  bool simulated() const { return !train_log.has_value(); }
};

DataConfig data_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DataConfig& d);

/// Propensity source for IPS methods: a harvesting estimator run on the
/// training log, or the simulator's true curve.
enum class PropensitySource { kGroundTruth, kAdjacentPair, kPivotRank, kAllPairs };
std::string_view to_string(PropensitySource s);
PropensitySource propensity_source_from_string(std::string_view s);

struct ExperimentConfig {
  DataConfig data;
  std::vector<LossKind> methods;
  PropensitySource propensity = PropensitySource::kGroundTruth;
  int propensity_ranks = 0;  // 0 takes the log's largest rank
  PairPooling pooling = PairPooling::kMatched;
  TrainConfig train;  // loss kind and seed are set per run
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  double alpha = 0.01;
  Gain gain = Gain::kLinear;
  bool save_checkpoints = true;

  void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct MethodResult {
  LossKind kind;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> reports;  // aligned with seeds
  std::vector<TrainedModel> models;
};

struct PipelineResult {
  bool ok = true;
  std::string failed_stage;
  std::string error;
  bool invalid_input = false;  // the failure was a ValidationError
  std::optional<PropensityCurve> truth;
  std::optional<PropensityCurve> ips_curve;
  std::map<std::string, PropensityCurve> estimated;  // successful estimators by name
  std::vector<MethodResult> methods;
  MetricSummary random;
};

/// Runs simulate -> split -> propensity -> train -> evaluate -> report and
/// writes everything under `out`. Outputs are written atomically and are
/// byte-identical across repeated runs with the same config. A failure keeps
/// partial outputs and records the failing stage in manifest.json.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// `<run_dir>[:<method>]`; without a method the run must contain exactly one.
struct RunRef {
  std::filesystem::path dir;
  std::optional<std::string> method;
};
RunRef parse_run_ref(const std::string& s);

struct ComparisonRow {
  std::string run;
  std::string metric;
  double mean = 0.0;
  double baseline_mean = 0.0;
  TTestResult test;
};

/// Paired t-tests of every run against `baseline` on each shared metric, with
/// a Bonferroni correction over all (run, metric) tests. Writes `<out>.md` and
/// `<out>.csv` when `out` is non-empty.
std::vector<ComparisonRow> compare_runs(const std::vector<RunRef>& runs, const RunRef& baseline, double alpha,
                                        const std::filesystem::path& out);

/// Long-form CSV `method,rank,value` with one row per curve value plus
/// optional per-rank CTR rows (method `ctr`).
void emit_plot_data(std::ostream& out, const std::vector<PropensityCurve>& curves,
                    const std::vector<std::optional<double>>& ctr = {});

/// Writes `content` next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string sha256_hex(const std::string& bytes);
std::string format_double(double v);

}  // namespace ultr
