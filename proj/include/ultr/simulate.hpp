#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>

#include "ultr/corpus.hpp"
#include "ultr/curve.hpp"

namespace ultr {

/// Position-based user model used to generate semi-synthetic clicks.
/// Defaults are conventions, not measured values.
struct UserModelConfig {
  double eta = 1.0;            // bias severity: e(k) = (1/k)^eta
  int max_rank = 8;            // documents shown per session (when available)
  double epsilon_minus = 0.1;  // click probability of a grade-0 document once examined
  int max_grade = 4;
  double swap_fraction = 0.3;  // share of sessions with one random adjacent swap

  void validate() const;
};

enum class PolicyKind { kOracleNoisy, kFeatureLinear };

/// The production ranker that orders candidates before display.
///  - oracle-noisy:   grade + N(0, noise_sigma), re-drawn per session
///  - feature-linear: w . x with w ~ N(0, 1) per feature drawn from weight_seed,
///                    plus the same optional per-session noise
struct LoggingPolicy {
  PolicyKind kind = PolicyKind::kOracleNoisy;
  double noise_sigma = 1.0;
  std::uint64_t weight_seed = 0;
};

double position_bias(int rank, double eta);
double relevance_to_click_prob(int grade, const UserModelConfig& cfg);

struct SimulatedLog {
  ClickLog log;
  PropensityCurve truth;  // (1/k)^eta for k = 1..max_rank
  double eta = 0.0;
};

/// Sessions are generated independently from substream (seed, session index),
/// so this OpenMP version and generate_log_serial produce identical logs.
SimulatedLog generate_log(const JudgedDataset& data, const LoggingPolicy& policy, const UserModelConfig& cfg,
                          std::size_t n_sessions, std::uint64_t seed);
SimulatedLog generate_log_serial(const JudgedDataset& data, const LoggingPolicy& policy, const UserModelConfig& cfg,
                                 std::size_t n_sessions, std::uint64_t seed);

/// `{"eta": ..., "propensities": [...]}`
void write_truth_sidecar(std::ostream& out, const SimulatedLog& sim);

/// Generator for judged datasets with a known feature/relevance relationship.
/// Each document has a latent relevance z ~ N(0,1) that is bucketed into grades
/// 0..4; the first `n_informative` features are z plus Gaussian noise and the
/// remaining `n_noise` features are independent N(0,1). With `one_hot_grades`
/// the features are instead a one-hot encoding of the grade.
struct SyntheticJudgedConfig {
  std::size_t n_queries = 200;
  std::size_t docs_per_query = 20;
  std::size_t n_informative = 5;
  std::size_t n_noise = 5;
  double feature_noise = 0.5;
  bool one_hot_grades = false;
  std::uint64_t seed = 0;
};

JudgedDataset synthetic_judged(const SyntheticJudgedConfig& cfg);

}  // namespace ultr
