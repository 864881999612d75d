#include "ultr/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <unordered_map>

#include "ultr/error.hpp"

namespace ultr {

std::vector<std::optional<double>> ctr_by_rank(const ClickLog& log) {
  if (log.sessions.empty()) throw ValidationError("ctr_by_rank needs a non-empty log");
  std::vector<RankStats> stats(static_cast<std::size_t>(log.n_ranks));
  for (const auto& s : log.sessions)
    for (const auto& it : s.items) {
      auto& st = stats[static_cast<std::size_t>(it.rank - 1)];
      ++st.impressions;
      st.clicks += static_cast<std::uint64_t>(it.click);
    }
  std::vector<std::optional<double>> out(stats.size());
  for (std::size_t k = 0; k < stats.size(); ++k)
    if (stats[k].impressions > 0) out[k] = stats[k].ctr();
  return out;
}

InterventionIndex::InterventionIndex(int num_ranks)
    : num_ranks_(num_ranks), cells_(static_cast<std::size_t>(num_ranks * num_ranks)) {}

const PairCell& InterventionIndex::cell(int a, int b) const {
  if (a > b) std::swap(a, b);
  if (a < 1 || b > num_ranks_ || a == b) throw ValidationError("invalid rank pair");
  return cells_[static_cast<std::size_t>((a - 1) * num_ranks_ + (b - 1))];
}

PairCell& InterventionIndex::cell(int a, int b) {
  return const_cast<PairCell&>(static_cast<const InterventionIndex&>(*this).cell(a, b));
}

namespace {

struct Event {
  std::uint32_t query_doc;
  int rank;
  int click;
};

/// Assigns (query, doc) ids in first-seen order and flattens the log.
std::vector<Event> flatten(const ClickLog& log, std::vector<std::string>& keys) {
  std::unordered_map<std::string, std::uint32_t> ids;
  std::vector<Event> events;
  events.reserve(log.num_items());
  std::string key;
  for (const auto& s : log.sessions)
    for (const auto& it : s.items) {
      key.assign(s.query_id);
      key.push_back('\x1f');
      key.append(it.doc_id);
      auto [pos, inserted] = ids.try_emplace(key, static_cast<std::uint32_t>(keys.size()));
      if (inserted) keys.push_back(key);
      events.push_back({pos->second, it.rank, it.click});
    }
  return events;
}

using RankProfile = std::vector<std::pair<int, RankStats>>;  // sorted by rank

void emit_pairs(std::uint32_t qd, const RankProfile& profile, InterventionIndex& idx) {
  for (std::size_t x = 0; x < profile.size(); ++x)
    for (std::size_t y = x + 1; y < profile.size(); ++y) {
      auto& cell = idx.cell(profile[x].first, profile[y].first);
      cell.entries.push_back({qd, profile[x].second, profile[y].second});
      cell.lo_total.impressions += profile[x].second.impressions;
      cell.lo_total.clicks += profile[x].second.clicks;
      cell.hi_total.impressions += profile[y].second.impressions;
      cell.hi_total.clicks += profile[y].second.clicks;
    }
}

}  // namespace

InterventionIndex build_intervention_index_serial(const ClickLog& log) {
  InterventionIndex idx(log.n_ranks);
  const auto events = flatten(log, idx.query_docs);
  std::vector<std::map<int, RankStats>> per_qd(idx.query_docs.size());
  for (const auto& e : events) {
    auto& st = per_qd[e.query_doc][e.rank];
    ++st.impressions;
    st.clicks += static_cast<std::uint64_t>(e.click);
  }
  for (std::uint32_t qd = 0; qd < per_qd.size(); ++qd) {
    RankProfile profile(per_qd[qd].begin(), per_qd[qd].end());
    emit_pairs(qd, profile, idx);
  }
  return idx;
}

InterventionIndex build_intervention_index(const ClickLog& log) {
  InterventionIndex idx(log.n_ranks);
  const auto events = flatten(log, idx.query_docs);
  const std::size_t n_qd = idx.query_docs.size();

  // counting sort of events by (query, doc)
  std::vector<std::size_t> start(n_qd + 1, 0);
  for (const auto& e : events) ++start[e.query_doc + 1];
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<std::size_t> fill(start.begin(), start.end() - 1);
  std::vector<Event> grouped(events.size());
  for (const auto& e : events) grouped[fill[e.query_doc]++] = e;

  std::vector<RankProfile> profiles(n_qd);
#pragma omp parallel for schedule(dynamic, 256)
  for (std::int64_t q = 0; q < static_cast<std::int64_t>(n_qd); ++q) {
    auto& profile = profiles[static_cast<std::size_t>(q)];
    for (std::size_t i = start[static_cast<std::size_t>(q)]; i < start[static_cast<std::size_t>(q) + 1]; ++i) {
      const auto& e = grouped[i];
      auto it = std::lower_bound(profile.begin(), profile.end(), e.rank,
                                 [](const auto& p, int r) { return p.first < r; });
      if (it == profile.end() || it->first != e.rank) it = profile.insert(it, {e.rank, RankStats{}});
      ++it->second.impressions;
      it->second.clicks += static_cast<std::uint64_t>(e.click);
    }
  }
  for (std::uint32_t qd = 0; qd < n_qd; ++qd) emit_pairs(qd, profiles[qd], idx);
  return idx;
}

PairCtr pair_ctr(const PairCell& cell, PairPooling pooling) {
  PairCtr out;
  out.weight = static_cast<double>(std::min(cell.lo_total.impressions, cell.hi_total.impressions));
  if (cell.entries.empty()) return out;
  if (pooling == PairPooling::kPooled) {
    out.lo = cell.lo_total.ctr();
    out.hi = cell.hi_total.ctr();
    return out;
  }
  double wsum = 0.0, lo = 0.0, hi = 0.0;
  for (const auto& e : cell.entries) {
    const double w = static_cast<double>(std::min(e.lo.impressions, e.hi.impressions));
    wsum += w;
    lo += w * e.lo.ctr();
    hi += w * e.hi.ctr();
  }
  out.lo = lo / wsum;
  out.hi = hi / wsum;
  return out;
}

namespace {

void check_k(const InterventionIndex& idx, int num_ranks) {
  if (num_ranks < 1) throw ValidationError("number of ranks must be >= 1");
  if (num_ranks > idx.num_ranks())
    throw EstimationError("log only reaches rank " + std::to_string(idx.num_ranks()) + ", cannot estimate " +
                          std::to_string(num_ranks) + " ranks");
}

}  // namespace

PropensityCurve adjacent_pair(const InterventionIndex& idx, int num_ranks, const HarvestOptions& opts) {
  check_k(idx, num_ranks);
  std::vector<double> e(static_cast<std::size_t>(num_ranks), 1.0);
  for (int k = 1; k < num_ranks; ++k) {
    const auto& cell = idx.cell(k, k + 1);
    if (cell.entries.empty())
      throw EstimationError("no interventional data for adjacent ranks " + std::to_string(k) + " and " +
                            std::to_string(k + 1));
    const auto c = pair_ctr(cell, opts.pooling);
    if (c.lo == 0.0 || c.hi == 0.0)
      throw EstimationError("zero interventional CTR in rank pair (" + std::to_string(k) + ", " +
                            std::to_string(k + 1) + ")");
    e[static_cast<std::size_t>(k)] = e[static_cast<std::size_t>(k - 1)] * (c.hi / c.lo);
  }
  return PropensityCurve::normalized(CurveMethod::kAdjacentPair, e);
}

PropensityCurve pivot_rank(const InterventionIndex& idx, int num_ranks, int pivot, const HarvestOptions& opts) {
  check_k(idx, num_ranks);
  if (pivot < 1 || pivot > num_ranks) throw ValidationError("pivot rank outside 1.." + std::to_string(num_ranks));
  std::vector<double> e(static_cast<std::size_t>(num_ranks), 1.0);
  for (int k = 1; k <= num_ranks; ++k) {
    if (k == pivot) continue;
    const auto& cell = idx.cell(pivot, k);
    if (cell.entries.empty())
      throw EstimationError("no interventional data between pivot rank " + std::to_string(pivot) + " and rank " +
                            std::to_string(k));
    const auto c = pair_ctr(cell, opts.pooling);
    const double c_pivot = pivot < k ? c.lo : c.hi;
    const double c_k = pivot < k ? c.hi : c.lo;
    if (c_pivot == 0.0 || c_k == 0.0)
      throw EstimationError("zero interventional CTR in rank pair (" + std::to_string(pivot) + ", " +
                            std::to_string(k) + ")");
    e[static_cast<std::size_t>(k - 1)] = c_k / c_pivot;
  }
  return PropensityCurve::normalized(CurveMethod::kPivotRank, e);
}

PairObservations observe_pairs(const InterventionIndex& idx, int num_ranks, PairPooling pooling) {
  check_k(idx, num_ranks);
  PairObservations obs(num_ranks);
  for (int a = 1; a <= num_ranks; ++a)
    for (int b = a + 1; b <= num_ranks; ++b) {
      const auto c = pair_ctr(idx.cell(a, b), pooling);
      const auto at = obs.at(a, b);
      obs.lo[at] = c.lo;
      obs.hi[at] = c.hi;
      obs.weight[at] = idx.cell(a, b).entries.empty() ? 0.0 : c.weight;
    }
  return obs;
}

AllPairsResult solve_all_pairs(const PairObservations& obs, const AllPairsOptions& opts) {
  const int K = obs.num_ranks;
  if (K < 1) throw ValidationError("number of ranks must be >= 1");

  struct Term {
    int a, b;
    double w, ca, cb;
  };
  std::vector<Term> terms;
  double wsum = 0.0;
  for (int a = 1; a <= K; ++a)
    for (int b = a + 1; b <= K; ++b) {
      const auto at = obs.at(a, b);
      if (obs.weight[at] > 0.0 && (obs.lo[at] > 0.0 || obs.hi[at] > 0.0)) {
        terms.push_back({a - 1, b - 1, obs.weight[at], obs.lo[at], obs.hi[at]});
        wsum += obs.weight[at];
      }
    }

  // every rank must be reachable from rank 1 through observed pairs
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(K));
  for (const auto& t : terms) {
    adj[static_cast<std::size_t>(t.a)].push_back(t.b);
    adj[static_cast<std::size_t>(t.b)].push_back(t.a);
  }
  std::vector<bool> seen(static_cast<std::size_t>(K), false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v : adj[static_cast<std::size_t>(u)])
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        frontier.push(v);
      }
  }
  std::string unreachable;
  for (int k = 0; k < K; ++k)
    if (!seen[static_cast<std::size_t>(k)]) unreachable += (unreachable.empty() ? "" : ", ") + std::to_string(k + 1);
  if (!unreachable.empty()) throw EstimationError("rank co-occurrence graph is disconnected; unreachable ranks: " + unreachable);

  AllPairsResult res;
  res.values.assign(static_cast<std::size_t>(K), 1.0);
  if (K == 1) return res;
  for (auto& t : terms) t.w /= wsum;

  auto gradient = [&](const std::vector<double>& e, std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
    for (const auto& t : terms) {
      const double r = t.ca * e[static_cast<std::size_t>(t.b)] - t.cb * e[static_cast<std::size_t>(t.a)];
      g[static_cast<std::size_t>(t.b)] += 2.0 * t.w * r * t.ca;
      g[static_cast<std::size_t>(t.a)] -= 2.0 * t.w * r * t.cb;
    }
    g[0] = 0.0;  // e_1 is fixed
  };
  auto project = [](std::vector<double>& e) {
    e[0] = 1.0;
    for (std::size_t k = 1; k < e.size(); ++k) e[k] = std::clamp(e[k], PropensityCurve::kMinValue, 1.0);
  };

  // Lipschitz bound on the gradient: Gershgorin over the Hessian.
  std::vector<double> row_abs(static_cast<std::size_t>(K), 0.0);
  for (const auto& t : terms) {
    const auto a = static_cast<std::size_t>(t.a), b = static_cast<std::size_t>(t.b);
    row_abs[b] += 2.0 * t.w * (t.ca * t.ca + std::abs(t.ca * t.cb));
    row_abs[a] += 2.0 * t.w * (t.cb * t.cb + std::abs(t.ca * t.cb));
  }
  const double lipschitz = std::max(*std::max_element(row_abs.begin() + 1, row_abs.end()), 1e-300);
  const double step = 1.0 / lipschitz;

  std::vector<double> x = res.values, y = x, x_next(x.size()), g(x.size()), probe(x.size());
  double momentum = 1.0;
  auto mapping_norm = [&](const std::vector<double>& at) {
    gradient(at, g);
    probe = at;
    for (std::size_t k = 0; k < probe.size(); ++k) probe[k] -= step * g[k];
    project(probe);
    double n2 = 0.0;
    for (std::size_t k = 0; k < probe.size(); ++k) n2 += std::pow((at[k] - probe[k]) / step, 2);
    return std::sqrt(n2);
  };

  res.gradient_norm = mapping_norm(x);
  while (res.gradient_norm >= opts.tolerance && res.iterations < opts.max_iterations) {
    gradient(y, g);
    for (std::size_t k = 0; k < x.size(); ++k) x_next[k] = y[k] - step * g[k];
    project(x_next);
    const double next_momentum = (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
    // adaptive restart when the momentum direction opposes descent
    double dir = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) dir += (y[k] - x_next[k]) * (x_next[k] - x[k]);
    if (dir > 0.0) {
      momentum = 1.0;
      y = x_next;
    } else {
      for (std::size_t k = 0; k < x.size(); ++k)
        y[k] = x_next[k] + ((momentum - 1.0) / next_momentum) * (x_next[k] - x[k]);
      momentum = next_momentum;
    }
    project(y);
    x.swap(x_next);
    ++res.iterations;
    res.gradient_norm = mapping_norm(x);
  }
  res.values = x;
  return res;
}

PropensityCurve all_pairs(const InterventionIndex& idx, int num_ranks, const AllPairsOptions& opts) {
  const auto obs = observe_pairs(idx, num_ranks, opts.pooling);
  const auto res = solve_all_pairs(obs, opts);
  return PropensityCurve::normalized(CurveMethod::kAllPairs, res.values);
}

PropensityCurve extract_model_propensities(const ScoringModel& model, CurveMethod method) {
  if (!model.has_position_logits() || model.position_logits().empty())
    throw ValidationError("model has no per-rank examination parameters");
  std::vector<double> raw;
  for (double l : model.position_logits()) raw.push_back(1.0 / (1.0 + std::exp(-l)));
  return PropensityCurve::normalized(method, raw);
}

}  // namespace ultr
