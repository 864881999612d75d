#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ultr/error.hpp"
#include "ultr/eval.hpp"
#include "ultr/simulate.hpp"
#include "ultr/train.hpp"

using namespace ultr;

namespace {

double oracle_dcg(const std::vector<int>& grades, int k) {
  double d = 0.0;
  for (int i = 0; i < std::min<int>(k, static_cast<int>(grades.size())); ++i)
    d += grades[static_cast<std::size_t>(i)] / std::log2(i + 2.0);
  return d;
}

/// Single-feature dataset whose feature equals the grade.
JudgedDataset graded(const std::vector<std::vector<int>>& queries) {
  JudgedDataset d;
  d.num_features = 1;
  int q = 0;
  for (const auto& grades : queries) {
    JudgedQuery jq{"q" + std::to_string(q++), {}};
    for (std::size_t i = 0; i < grades.size(); ++i)
      jq.docs.push_back({"d" + std::to_string(i), {static_cast<double>(grades[i])}, grades[i]});
    d.queries.push_back(jq);
  }
  return d;
}

ScoringModel linear(double w, double b = 0.0, std::size_t dim = 1) {
  auto m = ScoringModel::init(Architecture{dim, {}, 0.0, PositionParams::kNone, 0}, 0);
  for (auto& v : m.weight(0)) v = w;
  m.bias(0)[0] = b;
  return m;
}

std::vector<std::vector<int>> random_queries(std::size_t n, std::size_t max_docs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> grade(0, 4);
  std::uniform_int_distribution<std::size_t> len(1, max_docs);
  std::vector<std::vector<int>> out(n);
  for (auto& q : out) {
    q.resize(len(rng));
    for (auto& g : q) g = grade(rng);
  }
  return out;
}

// Two-sided Student-t tail by Simpson integration of the density.
double t_tail_oracle(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = pdf(0) + pdf(std::abs(t));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST_CASE("DCG, MRR and NLL examples") {
  CHECK(dcg_at_k(std::vector<int>{4, 0, 0}, 3) == 4.0);
  CHECK(dcg_at_k(std::vector<int>{1, 1}, 2) == doctest::Approx(1.0 + 1.0 / std::log2(3.0)));
  CHECK(dcg_at_k(std::vector<int>{1, 1}, 2) == doctest::Approx(1.6309).epsilon(1e-4));
  CHECK(dcg_at_k(std::vector<int>{0, 0, 0}, 10) == 0.0);
  CHECK(dcg_at_k(std::vector<int>{3, 2}, 10) == doctest::Approx(3.0 + 2.0 / std::log2(3.0)));
  CHECK(dcg_at_k(std::vector<int>{2, 1}, 1, Gain::kExponential) == 3.0);
  CHECK_THROWS_AS(dcg_at_k(std::vector<int>{1}, 0), ValidationError);

  CHECK(mrr_at_10(std::vector<int>{0, 2, 1}) == 0.5);
  CHECK(mrr_at_10(std::vector<int>{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 4}) == 0.0);
  CHECK(mrr_at_10(std::vector<int>{3}) == 1.0);
  CHECK(mrr_at_10(std::vector<int>{1, 2}, 2) == 0.5);

  CHECK(nll(std::vector<double>{0.5}, std::vector<int>{1}) == doctest::Approx(std::log(2.0)));
  CHECK(nll(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0}) < 1e-11);
  CHECK(std::isfinite(nll(std::vector<double>{0.0}, std::vector<int>{1})));
  CHECK(nll(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(nll(std::vector<double>{0.5}, std::vector<int>{1, 0}), ValidationError);
}

TEST_CASE("DCG matches an independent oracle and is swap monotone") {
  for (const auto& q : random_queries(200, 15, 1))
    for (int k : kDcgCutoffs) CHECK(dcg_at_k(q, k) == doctest::Approx(oracle_dcg(q, k)).epsilon(1e-13));

  for (const auto& q : random_queries(200, 12, 2))
    for (int k : kDcgCutoffs)
      for (std::size_t i = 0; i < q.size() && static_cast<int>(i) < k; ++i)
        for (std::size_t j = i + 1; j < q.size() && static_cast<int>(j) < k; ++j)
          if (q[j] > q[i]) {
            auto better = q;
            std::swap(better[i], better[j]);
            CHECK(dcg_at_k(better, k) >= dcg_at_k(q, k));
          }
}

TEST_CASE("ranking by scores is stable") {
  CHECK(rank_by_scores(std::vector<double>{0.1, 0.5, 0.1, 0.7}) == std::vector<std::size_t>{3, 1, 0, 2});
  CHECK(rank_by_scores(std::vector<double>{1, 1, 1}) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("evaluate ranker against permutation oracles") {
  const auto queries = random_queries(60, 6, 3);
  const auto data = graded(queries);
  std::vector<double> best(queries.size()), worst(queries.size()), input(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    auto perm = queries[qi];
    std::sort(perm.begin(), perm.end());
    best[qi] = -1e9;
    worst[qi] = 1e9;
    do {
      best[qi] = std::max(best[qi], oracle_dcg(perm, 10));
      worst[qi] = std::min(worst[qi], oracle_dcg(perm, 10));
    } while (std::next_permutation(perm.begin(), perm.end()));
    input[qi] = oracle_dcg(queries[qi], 10);
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };

  CHECK(evaluate_ranker(linear(1.0), data).dcg.at(10) == doctest::Approx(mean(best)).epsilon(1e-13));
  CHECK(evaluate_ranker(linear(-1.0), data).dcg.at(10) == doctest::Approx(mean(worst)).epsilon(1e-13));
  CHECK(evaluate_ranker(linear(0.0, 0.4), data).dcg.at(10) == doctest::Approx(mean(input)).epsilon(1e-13));

  // arbitrary scorer: exhaustive search for the permutation sorted by score, ties in input order
  JudgedDataset noisy = data;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (auto& q : noisy.queries)
    for (auto& d : q.docs) d.features = {n(rng), n(rng)};
  noisy.num_features = 2;
  auto model = linear(0.0, 0.0, 2);
  model.weight(0)[0] = 0.8;
  model.weight(0)[1] = -1.3;
  double expect = 0.0;
  for (const auto& q : noisy.queries) {
    Matrix x(q.docs.size(), 2);
    for (std::size_t i = 0; i < q.docs.size(); ++i) x.row(i)[0] = q.docs[i].features[0], x.row(i)[1] = q.docs[i].features[1];
    const auto s = forward(model, x);
    std::vector<std::size_t> perm(q.docs.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      bool sorted = true;
      for (std::size_t i = 1; i < perm.size(); ++i)
        sorted = sorted && (s[perm[i - 1]] > s[perm[i]] || (s[perm[i - 1]] == s[perm[i]] && perm[i - 1] < perm[i]));
      if (sorted) break;
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::vector<int> g;
    for (auto i : perm) g.push_back(q.docs[i].grade);
    expect += oracle_dcg(g, 10) / static_cast<double>(noisy.queries.size());
  }
  CHECK(evaluate_ranker(model, noisy).dcg.at(10) == doctest::Approx(expect).epsilon(1e-13));

  // strictly monotone transform of the scores: scale and shift
  auto scaled = model;
  for (auto& v : scaled.weight(0)) v *= 3.0;
  scaled.bias(0)[0] = -7.0;
  auto a = evaluate_ranker(model, noisy), b = evaluate_ranker(scaled, noisy);
  CHECK(a.dcg == b.dcg);
  CHECK(a.mrr10 == b.mrr10);
}

TEST_CASE("evaluate ranker ignores position parameters and matches the serial path") {
  SyntheticJudgedConfig sc;
  sc.n_queries = 80;
  auto data = synthetic_judged(sc);
  auto m = ScoringModel::init(Architecture{data.num_features, {16}, 0.0, PositionParams::kLogits, 10}, 5);
  auto base = evaluate_ranker(m, data);
  for (auto& l : m.position_logits()) l = -5.0;
  CHECK(evaluate_ranker(m, data).dcg == base.dcg);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  auto par = evaluate_ranker(m, data);
  omp_set_num_threads(saved);
  auto ser = evaluate_ranker_serial(m, data);
  CHECK(par.dcg == ser.dcg);
  CHECK(par.mrr10 == ser.mrr10);
  CHECK(par.n_queries == 80);
  CHECK_THROWS_AS(evaluate_ranker(linear(1.0, 0.0, 3), data), ValidationError);
}

TEST_CASE("random baseline") {
  auto flat = graded({std::vector<int>(12, 2), std::vector<int>(10, 2)});
  auto r = random_baseline(flat, 5, 1);
  double harmonic = 0.0;
  for (int i = 1; i <= 10; ++i) harmonic += 1.0 / std::log2(i + 1.0);
  CHECK(harmonic == doctest::Approx(4.5436).epsilon(1e-4));
  CHECK(r.mean.dcg.at(10) == doctest::Approx(2.0 * harmonic).epsilon(1e-13));

  auto single = random_baseline(graded({{3}, {1}, {4}}), 6, 2);
  CHECK(single.sd.dcg.at(10) == 0.0);
  CHECK(single.per_seed.size() == 6);

  // expectation over mixed grades: mean grade times the discount sum
  auto mixed = graded({{0, 1, 2, 3, 4, 0, 1, 2, 3, 4}});
  auto many = random_baseline(mixed, 4000, 3);
  CHECK(std::abs(many.mean.dcg.at(10) - 2.0 * harmonic) < 0.05);
  CHECK_THROWS_AS(random_baseline(mixed, 0), ValidationError);
}

TEST_CASE("summaries use the sample standard deviation") {
  MetricReport a, b;
  a.dcg = {{1, 1.0}, {3, 1.0}, {5, 1.0}, {10, 2.0}};
  b.dcg = {{1, 3.0}, {3, 1.0}, {5, 1.0}, {10, 2.0}};
  a.mrr10 = 0.5;
  b.mrr10 = 1.0;
  auto s = summarize({a, b});
  CHECK(s.mean.dcg.at(1) == 2.0);
  CHECK(s.sd.dcg.at(1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(s.sd.dcg.at(10) == 0.0);
  CHECK(s.mean.mrr10 == 0.75);
}

TEST_CASE("paired t-test") {
  const std::vector<double> zeros(5, 0.0), diffs = {1, 2, 3, 4, 5};
  auto same = paired_ttest(diffs, diffs);
  CHECK(same.t == 0.0);
  CHECK(same.significance == Significance::kNone);

  auto r = paired_ttest(diffs, zeros);
  CHECK(r.t == doctest::Approx(3.0 / (std::sqrt(2.5) / std::sqrt(5.0))).epsilon(1e-12));
  CHECK(r.t == doctest::Approx(4.2426).epsilon(1e-4));
  CHECK(r.p == doctest::Approx(t_tail_oracle(r.t, 4)).epsilon(1e-9));
  CHECK(r.p == doctest::Approx(0.0132).epsilon(1e-2));
  CHECK(r.significance == Significance::kNone);  // 0.0132 > 0.01
  CHECK(paired_ttest(diffs, zeros, 0.05).significance == Significance::kBetter);
  CHECK(paired_ttest(diffs, zeros, 0.05, 1, false).significance == Significance::kWorse);

  auto back = paired_ttest(zeros, diffs);
  CHECK(back.t == -r.t);
  CHECK(back.p == r.p);

  for (double t : {0.3, 1.0, 2.5, 7.0})
    for (double df : {1.0, 4.0, 9.0, 30.0}) {
      CAPTURE(t);
      CAPTURE(df);
      CHECK(student_t_two_sided_p(t, df) == doctest::Approx(t_tail_oracle(t, df)).epsilon(1e-8));
      CHECK(student_t_two_sided_p(-t, df) == student_t_two_sided_p(t, df));
    }

  // Bonferroni: t = 3.5 / (sqrt(2.5) / sqrt(5)) gives p near 0.008 with df 4
  const std::vector<double> c = {1.5, 2.5, 3.5, 4.5, 5.5}, b(5, 0.0);
  auto mid = paired_ttest(c, b, 0.01, 1);
  CAPTURE(mid.p);
  REQUIRE(mid.p > 0.005);
  REQUIRE(mid.p < 0.01);
  CHECK(mid.significance == Significance::kBetter);
  CHECK(paired_ttest(c, b, 0.01, 2).significance == Significance::kNone);

  auto degenerate = paired_ttest(std::vector<double>{2, 3, 4}, std::vector<double>{1, 2, 3});
  CHECK(degenerate.degenerate);
  CHECK(degenerate.significance == Significance::kBetter);
  CHECK(paired_ttest(std::vector<double>{1, 2}, std::vector<double>{1, 2}).significance == Significance::kNone);

  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1, 2}, std::vector<double>{1}), ValidationError);
}

TEST_CASE("click predictions") {
  ClickLog log;
  log.sessions.push_back({"s", "q", {{"a", 1, 1, {0.5}}, {"b", 3, 0, {2.0}}}});
  log.recompute_n_ranks();
  auto m = ScoringModel::init(Architecture{1, {}, 0.0, PositionParams::kLogits, 3}, 0);
  m.weight(0)[0] = 0.7;
  m.bias(0)[0] = -0.2;
  m.position_logits()[0] = 1.5;
  m.position_logits()[2] = -0.5;
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double s0 = -0.2 + 0.7 * log1p_signed(0.5), s1 = -0.2 + 0.7 * log1p_signed(2.0);

  auto naive = predict_clicks(m, LossKind::kNaivePointwise, std::nullopt, log);
  REQUIRE(naive);
  CHECK((*naive)[0] == doctest::Approx(sig(s0)).epsilon(1e-14));
  auto tt = predict_clicks(m, LossKind::kTwoTower, std::nullopt, log);
  CHECK((*tt)[1] == doctest::Approx(sig(s1 - 0.5)).epsilon(1e-14));
  auto rem = predict_clicks(m, LossKind::kRegressionEm, std::nullopt, log);
  CHECK((*rem)[0] == doctest::Approx(sig(s0) * sig(1.5)).epsilon(1e-14));
  PropensityCurve curve(CurveMethod::kGroundTruth, {1.0, 0.5, 0.25});
  auto ips = predict_clicks(m, LossKind::kIpsPointwise, curve, log);
  CHECK((*ips)[1] == doctest::Approx(sig(s1) * 0.25).epsilon(1e-14));
  CHECK_FALSE(predict_clicks(m, LossKind::kNaiveListwise, std::nullopt, log));
  CHECK_FALSE(click_nll(m, LossKind::kDla, std::nullopt, log));

  auto n = click_nll(m, LossKind::kRegressionEm, std::nullopt, log);
  REQUIRE(n);
  CHECK(*n == doctest::Approx(nll(*rem, std::vector<int>{1, 0})).epsilon(1e-14));
}
