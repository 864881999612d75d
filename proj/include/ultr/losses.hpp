#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ultr/curve.hpp"

namespace ultr {

enum class LossKind {
  kNaivePointwise,
  kNaiveListwise,
  kNaiveLambdaRank,
  kTwoTower,
  kRegressionEm,
  kIpsPointwise,
  kIpsListwise,
  kDla,
  kPairDebias,
};

std::string_view to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

/// Base-loss family used to group methods for comparison against a naive baseline.
enum class LossGroup { kPointwise, kListwise, kLambdaRank };
LossGroup group_of(LossKind k);
LossKind naive_of(LossGroup g);

bool uses_position_logits(LossKind k);      // two-tower, regression-em, dla
bool uses_pair_propensities(LossKind k);    // pair-debias
bool requires_curve(LossKind k);            // ips-pointwise, ips-listwise
bool predicts_click_probability(LossKind k);

struct LossSpec {
  LossKind kind = LossKind::kNaivePointwise;
  double tau = 0.1;
  std::optional<PropensityCurve> curve;  // IPS kinds only
  double l1_weight = 1.0;

  void validate() const;
};

/// Loss and gradients for one session. `d_exam` is per item (w.r.t. the
/// examination logit at that item's rank); `d_plus` / `d_minus` are per rank.
struct LossResult {
  double loss = 0.0;
  std::vector<double> d_scores;
  std::vector<double> d_exam;
  std::vector<double> d_plus;
  std::vector<double> d_minus;
};

// Every function below takes one session: relevance logits `s`, clicks `c` and
// displayed ranks `k`, all indexed by item. Computations stay in logit space.

/// mean_i BCE(sigmoid(s_i), c_i)
LossResult naive_pointwise(std::span<const double> s, std::span<const int> c);
/// -sum_i c_i log softmax(s)_i
LossResult naive_listwise(std::span<const double> s, std::span<const int> c);
/// sum over c_i > c_j of |dDCG_ij| * log(1 + exp(-(s_i - s_j))); dDCG uses
/// linear click gain and discounts at the current predicted ordering.
LossResult naive_lambdarank(std::span<const double> s, std::span<const int> c);

/// mean_i BCE(sigmoid(exam_i + s_i), c_i); `exam` holds the logit at each item's rank.
LossResult two_tower(std::span<const double> s, std::span<const double> exam, std::span<const int> c);

/// Posterior relevance and examination given no click, for one item:
/// r' = r(1-e)/(1-re), e' = e(1-r)/(1-re), computed from logits.
struct RemPosterior {
  double relevance;
  double examination;
};
RemPosterior rem_posterior(double relevance_logit, double exam_logit);

/// Soft EM targets for every item: clicked items get 1, others their posterior.
struct RemTargets {
  std::vector<double> relevance;
  std::vector<double> examination;
};
RemTargets rem_targets(std::span<const double> s, std::span<const double> exam, std::span<const int> c);
/// BCE(sigmoid(s), t_r) + BCE(sigmoid(exam), t_e), averaged over items, targets held fixed.
LossResult regression_em_with_targets(std::span<const double> s, std::span<const double> exam, const RemTargets& t);
LossResult regression_em(std::span<const double> s, std::span<const double> exam, std::span<const int> c);

/// max(tau, e(1)) / max(tau, e(k))
double ips_weight(const PropensityCurve& curve, int rank, double tau);
/// mean_i BCE(sigmoid(s_i), w_i c_i) with targets allowed above 1.
LossResult ips_pointwise(std::span<const double> s, std::span<const int> c, std::span<const int> k,
                         const PropensityCurve& curve, double tau);
/// -sum_i w_i c_i log softmax(s)_i
LossResult ips_listwise(std::span<const double> s, std::span<const int> c, std::span<const int> k,
                        const PropensityCurve& curve, double tau);

/// Gradient-detached cross weights of the dual learning algorithm. With items
/// in rank order, item 0 is the first-ranked document d1:
///   relevance[i]   = softmax(exam)_0 / softmax(exam)_i
///   examination[i] = softmax(s)_0 / softmax(s)_i
struct DlaWeights {
  std::vector<double> relevance;
  std::vector<double> examination;
};
DlaWeights dla_weights(std::span<const double> s, std::span<const double> exam);
LossResult dla_with_weights(std::span<const double> s, std::span<const double> exam, std::span<const int> c,
                            const DlaWeights& w);
LossResult dla(std::span<const double> s, std::span<const double> exam, std::span<const int> c);

/// LambdaRank pair terms divided by e_plus(k_i) * e_minus(k_j) for clicked i and
/// unclicked j, plus l1_weight * (|e_plus|_1 + |e_minus|_1). Both propensity
/// vectors are indexed by rank - 1 and must be strictly positive.
LossResult pair_debias(std::span<const double> s, std::span<const int> c, std::span<const int> k,
                       std::span<const double> e_plus, std::span<const double> e_minus, double l1_weight);

/// Softmax-weighted listwise loss shared by the naive, IPS and DLA variants:
/// -sum_i w_i c_i log softmax(x)_i.
LossResult weighted_softmax_loss(std::span<const double> x, std::span<const int> c, std::span<const double> w);

}  // namespace ultr
