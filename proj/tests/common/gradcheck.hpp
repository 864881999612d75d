#pragma once

// Finite-difference check of a session loss composed through the scoring
// model. Losses with gradient-detached parts (RegressionEM targets, DLA cross
// weights) are differentiated with those parts frozen at the current point,
// which is exactly what the analytic gradient computes.

#include <algorithm>
#include <cmath>
#include <random>

#include "ultr/losses.hpp"
#include "ultr/model.hpp"
#include "ultr/train.hpp"

namespace gradcheck {

using namespace ultr;

struct Session {
  ClickLog log;  // exactly one session
  std::vector<int> clicks, ranks;
  Matrix features;
};

inline constexpr std::size_t kRanks = 12;
inline constexpr std::size_t kDim = 6;

/// Random session of 2..10 items with increasing (possibly gapped) ranks <= 12.
inline Session random_session(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(2, 10);
  std::normal_distribution<double> normal(0.0, 1.5);
  const int n = len(rng);
  std::vector<int> ranks(kRanks);
  for (std::size_t r = 0; r < kRanks; ++r) ranks[r] = static_cast<int>(r) + 1;
  std::shuffle(ranks.begin(), ranks.end(), rng);
  ranks.resize(static_cast<std::size_t>(n));
  std::sort(ranks.begin(), ranks.end());

  Session s;
  ultr::Session sess{"s", "q", {}};
  std::bernoulli_distribution click(0.4);
  for (int i = 0; i < n; ++i) {
    SessionItem it;
    it.doc_id = "d" + std::to_string(i);
    it.rank = ranks[static_cast<std::size_t>(i)];
    it.click = click(rng);
    for (std::size_t f = 0; f < kDim; ++f) it.features.push_back(normal(rng));
    sess.items.push_back(it);
  }
  if (sess.num_clicks() == 0) sess.items[static_cast<std::size_t>(n - 1)].click = 1;
  s.log.sessions.push_back(sess);
  s.log.recompute_n_ranks();
  s.features = Matrix(static_cast<std::size_t>(n), kDim);
  for (int i = 0; i < n; ++i) {
    s.clicks.push_back(sess.items[static_cast<std::size_t>(i)].click);
    s.ranks.push_back(sess.items[static_cast<std::size_t>(i)].rank);
    std::copy(sess.items[static_cast<std::size_t>(i)].features.begin(), sess.items[static_cast<std::size_t>(i)].features.end(),
              s.features.row(static_cast<std::size_t>(i)).begin());
  }
  return s;
}

inline ScoringModel random_model(LossKind kind, const std::vector<std::size_t>& hidden, std::mt19937_64& rng) {
  auto m = ScoringModel::init(architecture_for(kind, kDim, hidden, 0.0, kRanks), rng());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.3, 1.5);
  for (std::size_t l = 0; l < m.num_layers(); ++l)
    for (auto& b : m.bias(l)) b = 0.1 * normal(rng);
  for (auto& l : m.position_logits()) l = normal(rng);
  for (auto& v : m.propensity_plus()) v = pos(rng);
  for (auto& v : m.propensity_minus()) v = pos(rng);
  return m;
}

inline std::vector<double> exam_at(const ScoringModel& m, const std::vector<int>& ranks) {
  std::vector<double> e;
  for (int r : ranks) e.push_back(m.position_logits()[static_cast<std::size_t>(r - 1)]);
  return e;
}

/// Sign pattern of every hidden pre-activation plus the predicted order of the
/// items; central differences are only valid while this stays fixed.
inline std::vector<char> piecewise_pattern(const ScoringModel& m, const Matrix& features) {
  const auto pass = forward_pass(m, features, false, 0);
  std::vector<char> pattern;
  for (const auto& pre : pass.pre)
    for (double v : pre.data) pattern.push_back(v > 0.0);
  std::vector<std::size_t> order(pass.scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pass.scores[a] > pass.scores[b]; });
  for (auto i : order) pattern.push_back(static_cast<char>(i));
  return pattern;
}

struct CheckResult {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t refined = 0;      // coordinates whose stencil straddled a kink
};

inline CheckResult check(const LossSpec& spec, const ScoringModel& model, const Session& s, double h = 1e-4) {
  const std::vector<std::size_t> only = {0};
  const auto analytic = batch_gradient(model, pack(s.log), only, spec).grad;

  const bool frozen_rem = spec.kind == LossKind::kRegressionEm;
  const bool frozen_dla = spec.kind == LossKind::kDla;
  const auto s0 = forward(model, s.features);
  RemTargets targets;
  DlaWeights weights;
  if (frozen_rem) targets = rem_targets(s0, exam_at(model, s.ranks), s.clicks);
  if (frozen_dla) weights = dla_weights(s0, exam_at(model, s.ranks));

  auto loss_at = [&](const ScoringModel& m) {
    const auto sc = forward(m, s.features);
    if (frozen_rem) return regression_em_with_targets(sc, exam_at(m, s.ranks), targets).loss;
    if (frozen_dla) return dla_with_weights(sc, exam_at(m, s.ranks), s.clicks, weights).loss;
    return session_loss(spec, m, sc, s.clicks, s.ranks).loss;
  };

  const auto base_pattern = piecewise_pattern(model, s.features);
  CheckResult out;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  ScoringModel probe = model;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    const double orig = probe.parameters()[p];
    double step = h, numeric = 0.0;
    for (int attempt = 0; attempt < 3; ++attempt, step *= 1e-3) {
      probe.parameters()[p] = orig + step;
      const double up = loss_at(probe);
      const bool up_same = piecewise_pattern(probe, s.features) == base_pattern;
      probe.parameters()[p] = orig - step;
      const double down = loss_at(probe);
      const bool down_same = piecewise_pattern(probe, s.features) == base_pattern;
      numeric = (up - down) / (2.0 * step);
      if (up_same && down_same) break;
      if (attempt == 0) ++out.refined;
    }
    probe.parameters()[p] = orig;
    diff2 += (numeric - analytic[p]) * (numeric - analytic[p]);
    a2 += analytic[p] * analytic[p];
    n2 += numeric * numeric;
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  out.relative_error = std::sqrt(diff2) / scale;
  return out;
}

inline double relative_error(const LossSpec& spec, const ScoringModel& model, const Session& s) {
  return check(spec, model, s).relative_error;
}

inline LossSpec spec_for(LossKind kind) {
  LossSpec spec;
  spec.kind = kind;
  if (requires_curve(kind)) {
    std::vector<double> e(kRanks);
    for (std::size_t k = 0; k < kRanks; ++k) e[k] = 1.0 / static_cast<double>(k + 1);
    spec.curve = PropensityCurve(CurveMethod::kGroundTruth, e);
  }
  spec.l1_weight = 0.7;
  return spec;
}

inline constexpr LossKind kAllKinds[] = {LossKind::kNaivePointwise, LossKind::kNaiveListwise, LossKind::kNaiveLambdaRank,
                                         LossKind::kTwoTower,       LossKind::kRegressionEm,  LossKind::kIpsPointwise,
                                         LossKind::kIpsListwise,    LossKind::kDla,           LossKind::kPairDebias};

}  // namespace gradcheck
