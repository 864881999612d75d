#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ultr/corpus.hpp"
#include "ultr/curve.hpp"
#include "ultr/losses.hpp"
#include "ultr/model.hpp"

namespace ultr {

inline constexpr int kDcgCutoffs[] = {1, 3, 5, 10};

/// Linear gain grade / log2(i + 1) is the default; exponential uses 2^grade - 1.
enum class Gain { kLinear, kExponential };

struct MetricReport {
  std::map<int, double> dcg;  // truncation level -> DCG
  double mrr10 = 0.0;
  std::optional<double> nll;
  std::size_t n_queries = 0;
};

/// Named metric columns in a fixed order: dcg@1, dcg@3, dcg@5, dcg@10, mrr@10 and,
/// when present, nll.
std::vector<std::pair<std::string, double>> metric_columns(const MetricReport& r);
bool higher_is_better(const std::string& metric);

double dcg_at_k(std::span<const int> grades_in_ranked_order, int k, Gain gain = Gain::kLinear);
double mrr_at_10(std::span<const int> grades_in_ranked_order, int relevant_threshold = 1);
/// Mean binary negative log-likelihood; probabilities are clamped to [1e-12, 1 - 1e-12].
double nll(std::span<const double> click_probs, std::span<const int> clicks);

/// Item indices by descending score; ties keep input order.
std::vector<std::size_t> rank_by_scores(std::span<const double> scores);

/// Metrics for externally supplied per-query scores (aligned with data.queries).
MetricReport evaluate_scores(const JudgedDataset& data, const std::vector<std::vector<double>>& scores,
                             Gain gain = Gain::kLinear);

/// Ranks each query's documents by the relevance network only (position
/// parameters are ignored) and averages metrics over queries. Queries are
/// scored in parallel and aggregated in dataset order.
MetricReport evaluate_ranker(const ScoringModel& model, const JudgedDataset& data, Gain gain = Gain::kLinear);
MetricReport evaluate_ranker_serial(const ScoringModel& model, const JudgedDataset& data, Gain gain = Gain::kLinear);

struct MetricSummary {
  MetricReport mean;
  MetricReport sd;  // sample standard deviation across seeds
  std::vector<MetricReport> per_seed;
};
MetricSummary summarize(const std::vector<MetricReport>& runs);

/// Uniformly random permutation of every query, once per seed.
MetricSummary random_baseline(const JudgedDataset& data, std::size_t n_seeds, std::uint64_t seed = 0);

/// Predicted click probability of every logged item under a pointwise method,
/// or nullopt for methods that make no click predictions.
///  naive-pointwise: sigmoid(s); two-tower: sigmoid(e_k + s);
///  regression-em: sigmoid(s) * sigmoid(e_k); ips-pointwise: sigmoid(s) * curve(k)
std::optional<std::vector<double>> predict_clicks(const ScoringModel& model, LossKind kind,
                                                  const std::optional<PropensityCurve>& curve, const ClickLog& log);
std::optional<double> click_nll(const ScoringModel& model, LossKind kind, const std::optional<PropensityCurve>& curve,
                                const ClickLog& log);

enum class Significance { kNone, kBetter, kWorse };

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double mean_diff = 0.0;
  Significance significance = Significance::kNone;
  bool degenerate = false;  // differences had zero variance
};

/// Two-sided Student-t tail probability P(|T| >= |t|) with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

/// Paired two-sided t-test on a - b, significant when p < alpha / n_comparisons.
/// `better` means a exceeds b for a higher-is-better metric (reversed otherwise).
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.01,
                         std::size_t n_comparisons = 1, bool higher_better = true);

}  // namespace ultr
