#include "ultr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>

#include "ultr/error.hpp"
#include "ultr/rng.hpp"

namespace ultr {

std::vector<std::pair<std::string, double>> metric_columns(const MetricReport& r) {
  std::vector<std::pair<std::string, double>> out;
  for (int k : kDcgCutoffs) {
    auto it = r.dcg.find(k);
    out.emplace_back("dcg@" + std::to_string(k), it == r.dcg.end() ? 0.0 : it->second);
  }
  out.emplace_back("mrr@10", r.mrr10);
  if (r.nll) out.emplace_back("nll", *r.nll);
  return out;
}

bool higher_is_better(const std::string& metric) { return metric != "nll"; }

double dcg_at_k(std::span<const int> grades, int k, Gain gain) {
  if (k < 1) throw ValidationError("DCG truncation must be >= 1");
  const std::size_t n = std::min(grades.size(), static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gain == Gain::kLinear ? grades[i] : std::exp2(grades[i]) - 1.0;
    total += g / std::log2(static_cast<double>(i) + 2.0);
  }
  return total;
}

double mrr_at_10(std::span<const int> grades, int relevant_threshold) {
  const std::size_t n = std::min<std::size_t>(grades.size(), 10);
  for (std::size_t i = 0; i < n; ++i)
    if (grades[i] >= relevant_threshold) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

double nll(std::span<const double> probs, std::span<const int> clicks) {
  if (probs.size() != clicks.size()) throw ValidationError("nll: probabilities and clicks differ in length");
  if (probs.empty()) throw ValidationError("nll needs at least one impression");
  constexpr double kClamp = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kClamp, 1.0 - kClamp);
    total -= clicks[i] ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(probs.size());
}

std::vector<std::size_t> rank_by_scores(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

struct QueryMetrics {
  double dcg[std::size(kDcgCutoffs)] = {};
  double mrr = 0.0;
};

QueryMetrics query_metrics(const JudgedQuery& q, std::span<const double> scores, Gain gain) {
  const auto order = rank_by_scores(scores);
  std::vector<int> grades(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) grades[i] = q.docs[order[i]].grade;
  QueryMetrics m;
  for (std::size_t c = 0; c < std::size(kDcgCutoffs); ++c) m.dcg[c] = dcg_at_k(grades, kDcgCutoffs[c], gain);
  m.mrr = mrr_at_10(grades);
  return m;
}

MetricReport average(const std::vector<QueryMetrics>& per_query) {
  MetricReport r;
  r.n_queries = per_query.size();
  if (per_query.empty()) return r;
  const double n = static_cast<double>(per_query.size());
  for (std::size_t c = 0; c < std::size(kDcgCutoffs); ++c) {
    double total = 0.0;
    for (const auto& m : per_query) total += m.dcg[c];
    r.dcg[kDcgCutoffs[c]] = total / n;
  }
  double mrr = 0.0;
  for (const auto& m : per_query) mrr += m.mrr;
  r.mrr10 = mrr / n;
  return r;
}

Matrix query_features(const JudgedQuery& q, std::size_t dim) {
  Matrix x(q.docs.size(), dim);
  for (std::size_t i = 0; i < q.docs.size(); ++i) {
    if (q.docs[i].features.size() != dim) throw ValidationError("feature dimensionality mismatch in judged dataset");
    std::copy(q.docs[i].features.begin(), q.docs[i].features.end(), x.row(i).begin());
  }
  return x;
}

void check_dims(const ScoringModel& model, const JudgedDataset& data) {
  if (data.num_features != model.architecture().input_dim)
    throw ValidationError("judged dataset has " + std::to_string(data.num_features) + " features, model expects " +
                          std::to_string(model.architecture().input_dim));
}

}  // namespace

MetricReport evaluate_scores(const JudgedDataset& data, const std::vector<std::vector<double>>& scores, Gain gain) {
  if (scores.size() != data.queries.size()) throw ValidationError("one score vector per query required");
  std::vector<QueryMetrics> per_query(data.queries.size());
  for (std::size_t q = 0; q < data.queries.size(); ++q) {
    if (scores[q].size() != data.queries[q].docs.size()) throw ValidationError("score count differs from documents");
    per_query[q] = query_metrics(data.queries[q], scores[q], gain);
  }
  return average(per_query);
}

MetricReport evaluate_ranker(const ScoringModel& model, const JudgedDataset& data, Gain gain) {
  check_dims(model, data);
  std::vector<QueryMetrics> per_query(data.queries.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t q = 0; q < static_cast<std::int64_t>(data.queries.size()); ++q) {
    const auto& query = data.queries[static_cast<std::size_t>(q)];
    const auto scores = forward(model, query_features(query, data.num_features));
    per_query[static_cast<std::size_t>(q)] = query_metrics(query, scores, gain);
  }
  return average(per_query);
}

MetricReport evaluate_ranker_serial(const ScoringModel& model, const JudgedDataset& data, Gain gain) {
  check_dims(model, data);
  std::vector<QueryMetrics> per_query;
  for (const auto& query : data.queries) {
    Matrix x = query_features(query, data.num_features);
    std::vector<double> scores(x.rows);
    // one document at a time through the reference kernels
    for (std::size_t i = 0; i < x.rows; ++i) {
      Matrix row(1, x.cols);
      std::copy(x.row(i).begin(), x.row(i).end(), row.data.begin());
      for (auto& v : row.data) v = log1p_signed(v);
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        Matrix out;
        kernels::reference::affine_forward(row, model.weight(l), model.bias(l), out);
        if (l + 1 < model.num_layers())
          for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
        row = std::move(out);
      }
      scores[i] = row.data[0];
    }
    per_query.push_back(query_metrics(query, scores, gain));
  }
  return average(per_query);
}

MetricSummary summarize(const std::vector<MetricReport>& runs) {
  if (runs.empty()) throw ValidationError("cannot summarize zero runs");
  MetricSummary s;
  s.per_seed = runs;
  const double n = static_cast<double>(runs.size());
  auto mean_sd = [&](auto get) {
    double m = 0.0;
    for (const auto& r : runs) m += get(r);
    m /= n;
    double v = 0.0;
    for (const auto& r : runs) v += (get(r) - m) * (get(r) - m);
    return std::pair{m, runs.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0};
  };
  for (int k : kDcgCutoffs) {
    auto [m, sd] = mean_sd([k](const MetricReport& r) { return r.dcg.at(k); });
    s.mean.dcg[k] = m;
    s.sd.dcg[k] = sd;
  }
  auto [mm, msd] = mean_sd([](const MetricReport& r) { return r.mrr10; });
  s.mean.mrr10 = mm;
  s.sd.mrr10 = msd;
  if (std::all_of(runs.begin(), runs.end(), [](const MetricReport& r) { return r.nll.has_value(); })) {
    auto [nm, nsd] = mean_sd([](const MetricReport& r) { return *r.nll; });
    s.mean.nll = nm;
    s.sd.nll = nsd;
  }
  s.mean.n_queries = s.sd.n_queries = runs.front().n_queries;
  return s;
}

MetricSummary random_baseline(const JudgedDataset& data, std::size_t n_seeds, std::uint64_t seed) {
  if (n_seeds < 1) throw ValidationError("random baseline needs at least one seed");
  std::vector<MetricReport> runs;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    auto rng = substream(seed, Stream::kRandomBaseline, s);
    std::vector<std::vector<double>> scores(data.queries.size());
    for (std::size_t q = 0; q < data.queries.size(); ++q) {
      const std::size_t n = data.queries[q].docs.size();
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      // score = -position so that the stable sort reproduces the permutation
      scores[q].resize(n);
      for (std::size_t pos = 0; pos < n; ++pos) scores[q][perm[pos]] = -static_cast<double>(pos);
    }
    runs.push_back(evaluate_scores(data, scores));
  }
  return summarize(runs);
}

std::optional<std::vector<double>> predict_clicks(const ScoringModel& model, LossKind kind,
                                                  const std::optional<PropensityCurve>& curve, const ClickLog& log) {
  if (!predicts_click_probability(kind)) return std::nullopt;
  if (kind == LossKind::kIpsPointwise && !curve) throw ValidationError("ips-pointwise click prediction needs a curve");
  const std::size_t dim = model.architecture().input_dim;
  const auto logits = model.position_logits();
  auto sigmoid = [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  auto exam_logit = [&](int rank) {
    if (logits.empty()) throw ValidationError("model has no examination logits");
    return logits[std::min<std::size_t>(static_cast<std::size_t>(rank), logits.size()) - 1];
  };

  std::vector<double> probs;
  probs.reserve(log.num_items());
  for (const auto& s : log.sessions) {
    if (s.items.empty()) continue;
    Matrix x(s.items.size(), dim);
    for (std::size_t i = 0; i < s.items.size(); ++i) {
      if (s.items[i].features.size() != dim) throw ValidationError("click log feature dimensionality mismatch");
      std::copy(s.items[i].features.begin(), s.items[i].features.end(), x.row(i).begin());
    }
    const auto scores = forward(model, x);
    for (std::size_t i = 0; i < s.items.size(); ++i) {
      const int rank = s.items[i].rank;
      switch (kind) {
        case LossKind::kTwoTower: probs.push_back(sigmoid(exam_logit(rank) + scores[i])); break;
        case LossKind::kRegressionEm: probs.push_back(sigmoid(scores[i]) * sigmoid(exam_logit(rank))); break;
        case LossKind::kIpsPointwise: probs.push_back(sigmoid(scores[i]) * curve->at(rank)); break;
        default: probs.push_back(sigmoid(scores[i])); break;
      }
    }
  }
  return probs;
}

std::optional<double> click_nll(const ScoringModel& model, LossKind kind, const std::optional<PropensityCurve>& curve,
                                const ClickLog& log) {
  const auto probs = predict_clicks(model, kind, curve, log);
  if (!probs) return std::nullopt;
  std::vector<int> clicks;
  clicks.reserve(probs->size());
  for (const auto& s : log.sessions)
    for (const auto& it : s.items) clicks.push_back(it.click);
  return nll(*probs, clicks);
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return boost::math::ibeta(df / 2.0, 0.5, x);
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, double alpha,
                         std::size_t n_comparisons, bool higher_better) {
  if (a.size() != b.size()) throw ValidationError("paired t-test needs equal-length samples");
  if (a.size() < 2) throw ValidationError("paired t-test needs at least two pairs");
  if (n_comparisons < 1) throw ValidationError("n_comparisons must be >= 1");
  const double n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));

  TTestResult r;
  r.mean_diff = mean;
  if (sd == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) return r;
    r.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
  } else {
    r.t = mean / (sd / std::sqrt(n));
    r.p = student_t_two_sided_p(r.t, n - 1.0);
  }
  if (r.p < alpha / static_cast<double>(n_comparisons)) {
    const bool a_higher = mean > 0.0;
    r.significance = (a_higher == higher_better) ? Significance::kBetter : Significance::kWorse;
  }
  return r;
}

}  // namespace ultr
