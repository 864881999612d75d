#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultr/corpus.hpp"
#include "ultr/kernels.hpp"
#include "ultr/losses.hpp"
#include "ultr/model.hpp"

namespace ultr {

struct TrainConfig {
  LossSpec loss;
  std::vector<std::size_t> hidden_dims;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double dropout = 0.0;
  int max_epochs = 50;
  int patience = 5;
  std::size_t batch_size = 256;  // sessions per optimizer step
  std::uint64_t seed = 0;
  std::size_t num_ranks = 0;  // position parameters; 0 takes the largest rank in the logs

  /// Test hook: learning rate actually used during a (1-based) epoch.
  std::function<double(int epoch, double lr)> lr_hook;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Field names mirror TrainConfig; `loss` is the kind name, `curve` an inline
/// curve object or `curve_path` a file.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainedModel {
  ScoringModel model;  // snapshot with the lowest validation loss
  std::vector<EpochRecord> history;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

/// A click log flattened for batched scoring.
struct PackedLog {
  Matrix features;                   // one row per item
  std::vector<std::size_t> offsets;  // session s spans rows [offsets[s], offsets[s+1])
  std::vector<int> ranks;
  std::vector<int> clicks;
  int n_ranks = 0;

  std::size_t num_sessions() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};
PackedLog pack(const ClickLog& log);

Architecture architecture_for(LossKind kind, std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                              double dropout, std::size_t num_ranks);

/// Per-session loss for `scores` of one session, looking up whatever position
/// parameters the loss needs in `model`.
LossResult session_loss(const LossSpec& spec, const ScoringModel& model, std::span<const double> scores,
                        std::span<const int> clicks, std::span<const int> ranks);

struct BatchGradient {
  double loss_sum = 0.0;  // sum of per-session losses
  Gradient grad;
};

/// Gradient of the summed per-session loss over `sessions`. Session losses are
/// evaluated in parallel and reduced in the given order.
BatchGradient batch_gradient(const ScoringModel& model, const PackedLog& log, std::span<const std::size_t> sessions,
                             const LossSpec& spec, bool train_mode = false, std::uint64_t dropout_seed = 0);

/// Mean per-session loss in evaluation mode.
double mean_session_loss(const ScoringModel& model, const PackedLog& log, const LossSpec& spec);

TrainedModel train(const ClickLog& train_log, const ClickLog& val_log, const TrainConfig& cfg);

struct SweepRow {
  std::size_t config_index = 0;
  std::uint64_t seed = 0;
  double best_val_loss = 0.0;
  int stopped_epoch = 0;
  bool ok = true;
  std::string error;
};

/// One row per (config, seed), ordered by the config's mean validation loss
/// across seeds. Failed runs are reported in their row, not thrown.
std::vector<SweepRow> sweep(const std::vector<TrainConfig>& grid, const ClickLog& train_log, const ClickLog& val_log,
                            const std::vector<std::uint64_t>& seeds);

}  // namespace ultr
