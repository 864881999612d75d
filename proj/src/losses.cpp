#include "ultr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ultr/error.hpp"

namespace ultr {

namespace {

constexpr std::pair<LossKind, std::string_view> kLossNames[] = {
    {LossKind::kNaivePointwise, "naive-pointwise"},   {LossKind::kNaiveListwise, "naive-listwise"},
    {LossKind::kNaiveLambdaRank, "naive-lambdarank"}, {LossKind::kTwoTower, "two-tower"},
    {LossKind::kRegressionEm, "regression-em"},       {LossKind::kIpsPointwise, "ips-pointwise"},
    {LossKind::kIpsListwise, "ips-listwise"},         {LossKind::kDla, "dla"},
    {LossKind::kPairDebias, "pair-debias"},
};

// Cap on |log w| for the DLA cross weights so that losses stay finite.
constexpr double kMaxLogWeight = 30.0;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// BCE(sigmoid(x), t) = softplus(x) - t x; valid for targets above 1 as well.
double bce_logit(double x, double t) { return softplus(x) - t * x; }

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string("session arrays differ in length: ") + what);
}

LossResult mean_bce(std::span<const double> x, std::span<const double> targets) {
  LossResult r;
  const std::size_t n = x.size();
  r.d_scores.assign(n, 0.0);
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.loss += bce_logit(x[i], targets[i]);
    r.d_scores[i] = (sigmoid(x[i]) - targets[i]) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

std::vector<double> as_targets(std::span<const int> c) { return std::vector<double>(c.begin(), c.end()); }

double discount(std::size_t position) { return 1.0 / std::log2(static_cast<double>(position) + 2.0); }

/// Predicted 0-based position of every item (descending score, stable).
std::vector<std::size_t> predicted_positions(std::span<const double> s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<std::size_t> pos(s.size());
  for (std::size_t p = 0; p < order.size(); ++p) pos[order[p]] = p;
  return pos;
}

/// Calls f(i, j, term, d_term_d_si) for every pair with c_i > c_j, where term
/// is |dDCG| * log(1 + exp(-(s_i - s_j))).
template <typename F>
void for_each_lambda_pair(std::span<const double> s, std::span<const int> c, F&& f) {
  const auto pos = predicted_positions(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (c[i] <= c[j]) continue;
      const double delta = std::abs(static_cast<double>(c[i] - c[j])) * std::abs(discount(pos[i]) - discount(pos[j]));
      if (delta == 0.0) continue;
      const double diff = s[i] - s[j];
      f(i, j, delta * softplus(-diff), -delta * sigmoid(-diff));
    }
  }
}

}  // namespace

std::string_view to_string(LossKind k) {
  for (auto [kind, name] : kLossNames)
    if (kind == k) return name;
  return "unknown";
}

LossKind loss_kind_from_string(std::string_view s) {
  for (auto [kind, name] : kLossNames)
    if (name == s) return kind;
  throw ValidationError("unknown loss kind '" + std::string(s) + "'");
}

LossGroup group_of(LossKind k) {
  switch (k) {
    case LossKind::kNaivePointwise:
    case LossKind::kTwoTower:
    case LossKind::kRegressionEm:
    case LossKind::kIpsPointwise: return LossGroup::kPointwise;
    case LossKind::kNaiveListwise:
    case LossKind::kIpsListwise:
    case LossKind::kDla: return LossGroup::kListwise;
    case LossKind::kNaiveLambdaRank:
    case LossKind::kPairDebias: return LossGroup::kLambdaRank;
  }
  return LossGroup::kPointwise;
}

LossKind naive_of(LossGroup g) {
  switch (g) {
    case LossGroup::kPointwise: return LossKind::kNaivePointwise;
    case LossGroup::kListwise: return LossKind::kNaiveListwise;
    case LossGroup::kLambdaRank: return LossKind::kNaiveLambdaRank;
  }
  return LossKind::kNaivePointwise;
}

bool uses_position_logits(LossKind k) {
  return k == LossKind::kTwoTower || k == LossKind::kRegressionEm || k == LossKind::kDla;
}
bool uses_pair_propensities(LossKind k) { return k == LossKind::kPairDebias; }
bool requires_curve(LossKind k) { return k == LossKind::kIpsPointwise || k == LossKind::kIpsListwise; }
bool predicts_click_probability(LossKind k) { return group_of(k) == LossGroup::kPointwise; }

void LossSpec::validate() const {
  if (requires_curve(kind) && !curve) throw ValidationError(std::string(to_string(kind)) + " requires a propensity curve");
  if (!requires_curve(kind) && curve)
    throw ValidationError(std::string(to_string(kind)) + " does not take a propensity curve");
  if (requires_curve(kind) && !(tau > 0.0 && tau <= 1.0)) throw ValidationError("tau must lie in (0, 1]");
  if (!(l1_weight >= 0.0) || !std::isfinite(l1_weight)) throw ValidationError("l1_weight must be >= 0");
}

LossResult naive_pointwise(std::span<const double> s, std::span<const int> c) {
  check_same_size(s.size(), c.size(), "scores/clicks");
  const auto t = as_targets(c);
  return mean_bce(s, t);
}

LossResult weighted_softmax_loss(std::span<const double> x, std::span<const int> c, std::span<const double> w) {
  check_same_size(x.size(), c.size(), "scores/clicks");
  check_same_size(x.size(), w.size(), "scores/weights");
  LossResult r;
  const std::size_t n = x.size();
  r.d_scores.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += w[i] * c[i];
  if (n == 0 || total == 0.0) return r;

  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::exp(x[i] - lse);
    const double wc = w[i] * c[i];
    r.loss += wc * (lse - x[i]);
    r.d_scores[i] = total * p - wc;
  }
  return r;
}

LossResult naive_listwise(std::span<const double> s, std::span<const int> c) {
  const std::vector<double> ones(s.size(), 1.0);
  return weighted_softmax_loss(s, c, ones);
}

LossResult naive_lambdarank(std::span<const double> s, std::span<const int> c) {
  check_same_size(s.size(), c.size(), "scores/clicks");
  LossResult r;
  r.d_scores.assign(s.size(), 0.0);
  for_each_lambda_pair(s, c, [&](std::size_t i, std::size_t j, double term, double d_si) {
    r.loss += term;
    r.d_scores[i] += d_si;
    r.d_scores[j] -= d_si;
  });
  return r;
}

LossResult two_tower(std::span<const double> s, std::span<const double> exam, std::span<const int> c) {
  check_same_size(s.size(), c.size(), "scores/clicks");
  check_same_size(s.size(), exam.size(), "scores/examination");
  std::vector<double> x(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) x[i] = exam[i] + s[i];
  auto r = mean_bce(x, as_targets(c));
  r.d_exam = r.d_scores;
  return r;
}

RemPosterior rem_posterior(double relevance_logit, double exam_logit) {
  // r(1-e)/(1-re) = exp(s) / (1 + exp(s) + exp(e)), likewise for e.
  const double mx = std::max({0.0, relevance_logit, exam_logit});
  const double lse =
      mx + std::log(std::exp(-mx) + std::exp(relevance_logit - mx) + std::exp(exam_logit - mx));
  return {std::exp(relevance_logit - lse), std::exp(exam_logit - lse)};
}

RemTargets rem_targets(std::span<const double> s, std::span<const double> exam, std::span<const int> c) {
  check_same_size(s.size(), c.size(), "scores/clicks");
  check_same_size(s.size(), exam.size(), "scores/examination");
  RemTargets t;
  t.relevance.resize(s.size());
  t.examination.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (c[i] == 1) {
      t.relevance[i] = t.examination[i] = 1.0;
    } else {
      const auto post = rem_posterior(s[i], exam[i]);
      t.relevance[i] = post.relevance;
      t.examination[i] = post.examination;
    }
  }
  return t;
}

LossResult regression_em_with_targets(std::span<const double> s, std::span<const double> exam, const RemTargets& t) {
  auto rel = mean_bce(s, t.relevance);
  auto ex = mean_bce(exam, t.examination);
  rel.loss += ex.loss;
  rel.d_exam = std::move(ex.d_scores);
  return rel;
}

LossResult regression_em(std::span<const double> s, std::span<const double> exam, std::span<const int> c) {
  return regression_em_with_targets(s, exam, rem_targets(s, exam, c));
}

double ips_weight(const PropensityCurve& curve, int rank, double tau) {
  return std::max(tau, curve.at(1)) / std::max(tau, curve.at(rank));
}

LossResult ips_pointwise(std::span<const double> s, std::span<const int> c, std::span<const int> k,
                         const PropensityCurve& curve, double tau) {
  check_same_size(s.size(), c.size(), "scores/clicks");
  check_same_size(s.size(), k.size(), "scores/ranks");
  std::vector<double> t(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = ips_weight(curve, k[i], tau) * c[i];
  return mean_bce(s, t);
}

LossResult ips_listwise(std::span<const double> s, std::span<const int> c, std::span<const int> k,
                        const PropensityCurve& curve, double tau) {
  check_same_size(s.size(), k.size(), "scores/ranks");
  std::vector<double> w(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) w[i] = ips_weight(curve, k[i], tau);
  return weighted_softmax_loss(s, c, w);
}

DlaWeights dla_weights(std::span<const double> s, std::span<const double> exam) {
  check_same_size(s.size(), exam.size(), "scores/examination");
  DlaWeights w;
  w.relevance.resize(s.size());
  w.examination.resize(s.size());
  if (s.empty()) return w;
  // The softmax normalizers cancel in each ratio.
  for (std::size_t i = 0; i < s.size(); ++i) {
    w.relevance[i] = std::exp(std::clamp(exam[0] - exam[i], -kMaxLogWeight, kMaxLogWeight));
    w.examination[i] = std::exp(std::clamp(s[0] - s[i], -kMaxLogWeight, kMaxLogWeight));
  }
  return w;
}

LossResult dla_with_weights(std::span<const double> s, std::span<const double> exam, std::span<const int> c,
                            const DlaWeights& w) {
  auto rel = weighted_softmax_loss(s, c, w.relevance);
  auto ex = weighted_softmax_loss(exam, c, w.examination);
  rel.loss += ex.loss;
  rel.d_exam = std::move(ex.d_scores);
  return rel;
}

LossResult dla(std::span<const double> s, std::span<const double> exam, std::span<const int> c) {
  return dla_with_weights(s, exam, c, dla_weights(s, exam));
}

LossResult pair_debias(std::span<const double> s, std::span<const int> c, std::span<const int> k,
                       std::span<const double> e_plus, std::span<const double> e_minus, double l1_weight) {
  check_same_size(s.size(), c.size(), "scores/clicks");
  check_same_size(s.size(), k.size(), "scores/ranks");
  check_same_size(e_plus.size(), e_minus.size(), "positive/negative propensities");
  const std::size_t K = e_plus.size();
  for (std::size_t r = 0; r < K; ++r)
    if (!(e_plus[r] > 0.0) || !(e_minus[r] > 0.0)) throw ValidationError("pairwise propensities must be positive");
  for (int rank : k)
    if (rank < 1 || static_cast<std::size_t>(rank) > K)
      throw ValidationError("rank " + std::to_string(rank) + " outside the propensity range 1.." + std::to_string(K));

  LossResult r;
  r.d_scores.assign(s.size(), 0.0);
  r.d_plus.assign(K, 0.0);
  r.d_minus.assign(K, 0.0);
  for_each_lambda_pair(s, c, [&](std::size_t i, std::size_t j, double term, double d_si) {
    const std::size_t ki = static_cast<std::size_t>(k[i] - 1);
    const std::size_t kj = static_cast<std::size_t>(k[j] - 1);
    const double scale = 1.0 / (e_plus[ki] * e_minus[kj]);
    const double t = term * scale;
    r.loss += t;
    r.d_scores[i] += d_si * scale;
    r.d_scores[j] -= d_si * scale;
    r.d_plus[ki] -= t / e_plus[ki];
    r.d_minus[kj] -= t / e_minus[kj];
  });
  for (std::size_t q = 0; q < K; ++q) {
    r.loss += l1_weight * (e_plus[q] + e_minus[q]);
    r.d_plus[q] += l1_weight;
    r.d_minus[q] += l1_weight;
  }
  return r;
}

}  // namespace ultr
