#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultr/kernels.hpp"

namespace ultr {

/// Per-rank parameters carried next to the relevance network.
///  - kLogits: one examination logit per rank (two-tower, RegressionEM, DLA)
///  - kPairPropensities: positive/negative propensities per rank (pairwise debiasing)
enum class PositionParams { kNone, kLogits, kPairPropensities };

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;  // empty -> linear model
  double dropout = 0.0;                  // applied after every hidden ReLU in train mode
  PositionParams positions = PositionParams::kNone;
  std::size_t num_ranks = 0;

  void validate() const;
};

/// Feed-forward scorer: log1p feature transform, then affine+ReLU layers, then
/// an affine output producing one logit per document. All parameters live in
/// one flat vector; network parameters come first, position parameters last.
class ScoringModel {
 public:
  ScoringModel() = default;

  /// Fan-in uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases,
  /// examination logits at logit(0.9), pair propensities at 1.
  static ScoringModel init(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  std::size_t num_layers() const { return layer_offsets_.size(); }
  std::size_t layer_in(std::size_t l) const;
  std::size_t layer_out(std::size_t l) const;

  std::span<double> weight(std::size_t l);
  std::span<const double> weight(std::size_t l) const;
  std::span<double> bias(std::size_t l);
  std::span<const double> bias(std::size_t l) const;

  bool has_position_logits() const { return arch_.positions == PositionParams::kLogits; }
  bool has_pair_propensities() const { return arch_.positions == PositionParams::kPairPropensities; }
  std::span<double> position_logits();
  std::span<const double> position_logits() const;
  std::span<double> propensity_plus();
  std::span<const double> propensity_plus() const;
  std::span<double> propensity_minus();
  std::span<const double> propensity_minus() const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t num_network_parameters() const { return network_size_; }

  /// Offset of the position block inside parameters().
  std::size_t position_offset() const { return network_size_; }

  nlohmann::json metadata() const;

 private:
  Architecture arch_;
  std::vector<double> params_;
  std::vector<std::size_t> layer_offsets_;  // start of W_l; b_l follows
  std::size_t network_size_ = 0;

  void layout();
};

/// Same layout as ScoringModel::parameters().
using Gradient = std::vector<double>;

double log1p_signed(double x);
/// ln(1 + |x|) * sign(x), elementwise.
std::vector<double> log1p_transform(std::span<const double> x);

/// Activations kept from a forward pass for backpropagation.
struct ForwardPass {
  std::vector<Matrix> inputs;     // inputs[l] feeds layer l; inputs[0] is the transformed features
  std::vector<Matrix> pre;        // pre-activations of hidden layers
  std::vector<Matrix> masks;      // dropout multipliers (empty when inactive)
  std::vector<double> scores;
};

ForwardPass forward_pass(const ScoringModel& model, const Matrix& features, bool train_mode, std::uint64_t seed);
/// Accumulates d(upstream . scores)/d(params) into `out` (network block only).
void backward(const ScoringModel& model, const ForwardPass& pass, std::span<const double> upstream, Gradient& out);

std::vector<double> forward(const ScoringModel& model, const Matrix& features, bool train_mode = false,
                            std::uint64_t seed = 0);
/// Exact parameter gradient of sum_i upstream[i] * score_i. Replays the forward
/// pass with the same dropout seed.
Gradient grad(const ScoringModel& model, const Matrix& features, std::span<const double> upstream,
              bool train_mode = false, std::uint64_t seed = 0);

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(const AdamWConfig& cfg, std::size_t num_params)
      : config(cfg), first_moment(num_params, 0.0), second_moment(num_params, 0.0) {}
};

/// One AdamW update with bias-corrected moments. Decoupled weight decay is
/// applied to the first `decay_count` parameters only (the network block).
/// Throws TrainingError on a non-finite gradient.
void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grads,
                std::size_t decay_count);

/// Writes `<path>` (JSON metadata) and a sidecar `<path>.bin` holding the
/// parameters as little-endian float64. `extra` is merged into the JSON.
void save_checkpoint(const std::string& path, const ScoringModel& model, const nlohmann::json& extra = {});
ScoringModel load_checkpoint(const std::string& path, nlohmann::json* metadata = nullptr);

}  // namespace ultr
