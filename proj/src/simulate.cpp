#include "ultr/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "ultr/error.hpp"
#include "ultr/rng.hpp"

namespace ultr {

void UserModelConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ValidationError("eta must be >= 0");
  if (max_rank < 1) throw ValidationError("max_rank must be >= 1");
  if (!(epsilon_minus >= 0.0 && epsilon_minus < 1.0)) throw ValidationError("epsilon_minus must lie in [0, 1)");
  if (max_grade < 1) throw ValidationError("max_grade must be >= 1");
  if (!(swap_fraction >= 0.0 && swap_fraction <= 1.0)) throw ValidationError("swap_fraction must lie in [0, 1]");
}

double position_bias(int rank, double eta) {
  if (rank < 1) throw ValidationError("rank must be >= 1");
  return std::pow(1.0 / static_cast<double>(rank), eta);
}

double relevance_to_click_prob(int grade, const UserModelConfig& cfg) {
  if (grade < 0 || grade > cfg.max_grade)
    throw ValidationError("grade " + std::to_string(grade) + " outside 0.." + std::to_string(cfg.max_grade));
  const double gain = (std::exp2(grade) - 1.0) / (std::exp2(cfg.max_grade) - 1.0);
  return cfg.epsilon_minus + (1.0 - cfg.epsilon_minus) * gain;
}

namespace {

struct Simulator {
  const JudgedDataset& data;
  const LoggingPolicy& policy;
  const UserModelConfig& cfg;
  std::uint64_t seed;
  std::vector<double> policy_weights;
  std::vector<double> bias;  // e(k) for k = 1..max_rank

  Simulator(const JudgedDataset& d, const LoggingPolicy& p, const UserModelConfig& c, std::uint64_t s)
      : data(d), policy(p), cfg(c), seed(s) {
    cfg.validate();
    if (data.queries.empty()) throw ValidationError("cannot simulate clicks on an empty dataset");
    if (!(policy.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0");
    for (const auto& q : data.queries) {
      if (q.docs.empty()) throw ValidationError("query '" + q.query_id + "' has no documents");
      for (const auto& d : q.docs)
        if (d.grade < 0 || d.grade > cfg.max_grade) throw ValidationError("grade outside 0..max_grade");
    }
    if (policy.kind == PolicyKind::kFeatureLinear) {
      auto rng = substream(policy.weight_seed, Stream::kPolicyWeights);
      std::normal_distribution<double> normal(0.0, 1.0);
      policy_weights.resize(data.num_features);
      for (auto& w : policy_weights) w = normal(rng);
    }
    bias.resize(static_cast<std::size_t>(cfg.max_rank));
    for (int k = 1; k <= cfg.max_rank; ++k) bias[static_cast<std::size_t>(k - 1)] = position_bias(k, cfg.eta);
  }

  Session session(std::size_t index) const {
    auto rng = substream(seed, Stream::kSimulate, index);
    std::uniform_int_distribution<std::size_t> pick(0, data.queries.size() - 1);
    const auto& q = data.queries[pick(rng)];

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> score(q.docs.size());
    for (std::size_t i = 0; i < q.docs.size(); ++i) {
      double base = 0.0;
      if (policy.kind == PolicyKind::kOracleNoisy) {
        base = q.docs[i].grade;
      } else {
        const auto& x = q.docs[i].features;
        for (std::size_t f = 0; f < x.size(); ++f) base += policy_weights[f] * x[f];
      }
      score[i] = policy.noise_sigma > 0.0 ? base + policy.noise_sigma * noise(rng) : base;
    }
    std::vector<std::size_t> order(q.docs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    const std::size_t shown = std::min<std::size_t>(order.size(), static_cast<std::size_t>(cfg.max_rank));
    order.resize(shown);
    if (shown >= 2 && uniform01(rng) < cfg.swap_fraction) {
      std::uniform_int_distribution<std::size_t> at(0, shown - 2);
      const std::size_t j = at(rng);
      std::swap(order[j], order[j + 1]);
    }

    Session s;
    s.session_id = "s" + std::to_string(index);
    s.query_id = q.query_id;
    s.items.reserve(shown);
    for (std::size_t pos = 0; pos < shown; ++pos) {
      const auto& doc = q.docs[order[pos]];
      const double p = bias[pos] * relevance_to_click_prob(doc.grade, cfg);
      SessionItem item;
      item.doc_id = doc.doc_id;
      item.rank = static_cast<int>(pos) + 1;
      item.click = uniform01(rng) < p ? 1 : 0;
      item.features = doc.features;
      s.items.push_back(std::move(item));
    }
    return s;
  }

  SimulatedLog finish(std::vector<Session> sessions) const {
    ClickLog log;
    log.sessions = std::move(sessions);
    log.recompute_n_ranks();
    return SimulatedLog{std::move(log), PropensityCurve(CurveMethod::kGroundTruth, bias), cfg.eta};
  }
};

}  // namespace

SimulatedLog generate_log(const JudgedDataset& data, const LoggingPolicy& policy, const UserModelConfig& cfg,
                          std::size_t n_sessions, std::uint64_t seed) {
  if (n_sessions < 1) throw ValidationError("n_sessions must be >= 1");
  const Simulator sim(data, policy, cfg, seed);
  std::vector<Session> sessions(n_sessions);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n_sessions); ++i)
    sessions[static_cast<std::size_t>(i)] = sim.session(static_cast<std::size_t>(i));
  return sim.finish(std::move(sessions));
}

SimulatedLog generate_log_serial(const JudgedDataset& data, const LoggingPolicy& policy, const UserModelConfig& cfg,
                                 std::size_t n_sessions, std::uint64_t seed) {
  if (n_sessions < 1) throw ValidationError("n_sessions must be >= 1");
  const Simulator sim(data, policy, cfg, seed);
  std::vector<Session> sessions;
  sessions.reserve(n_sessions);
  for (std::size_t i = 0; i < n_sessions; ++i) sessions.push_back(sim.session(i));
  return sim.finish(std::move(sessions));
}

void write_truth_sidecar(std::ostream& out, const SimulatedLog& sim) {
  nlohmann::json j = {{"eta", sim.eta}, {"propensities", sim.truth.values()}};
  out << j.dump(2) << '\n';
}

JudgedDataset synthetic_judged(const SyntheticJudgedConfig& cfg) {
  if (cfg.n_queries < 1 || cfg.docs_per_query < 1) throw ValidationError("synthetic dataset needs queries and docs");
  auto rng = substream(cfg.seed, Stream::kSyntheticData);
  std::normal_distribution<double> normal(0.0, 1.0);
  // cut points on z giving roughly 50/26/14/7/3 percent for grades 0..4
  constexpr double kCuts[] = {0.0, 0.65, 1.25, 1.85};

  JudgedDataset data;
  data.num_features = cfg.one_hot_grades ? 5 : cfg.n_informative + cfg.n_noise;
  if (data.num_features == 0) throw ValidationError("synthetic dataset needs at least one feature");
  for (std::size_t qi = 0; qi < cfg.n_queries; ++qi) {
    JudgedQuery q;
    q.query_id = "q" + std::to_string(qi);
    for (std::size_t di = 0; di < cfg.docs_per_query; ++di) {
      JudgedDoc d;
      d.doc_id = q.query_id + "-d" + std::to_string(di);
      const double z = normal(rng);
      d.grade = static_cast<int>(std::upper_bound(std::begin(kCuts), std::end(kCuts), z) - std::begin(kCuts));
      d.features.resize(data.num_features);
      if (cfg.one_hot_grades) {
        d.features[static_cast<std::size_t>(d.grade)] = 1.0;
      } else {
        for (std::size_t f = 0; f < cfg.n_informative; ++f) d.features[f] = z + cfg.feature_noise * normal(rng);
        for (std::size_t f = cfg.n_informative; f < data.num_features; ++f) d.features[f] = normal(rng);
      }
      q.docs.push_back(std::move(d));
    }
    data.queries.push_back(std::move(q));
  }
  return data;
}

}  // namespace ultr
