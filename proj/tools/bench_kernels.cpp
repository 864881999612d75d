// Serial reference versus OpenMP implementations of the parallel hot paths.
// Both variants of each pair produce identical results (see the unit tests);
// this only measures speed. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>

#include "ultr/eval.hpp"
#include "ultr/kernels.hpp"
#include "ultr/propensity.hpp"
#include "ultr/simulate.hpp"

using namespace ultr;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (auto& v : m.data) v = n(rng);
  return m;
}

struct AffineCase {
  Matrix in, up;
  std::vector<double> w, b;
  std::size_t din, dout;
  AffineCase(std::size_t rows, std::size_t din_, std::size_t dout_)
      : in(random_matrix(rows, din_, 1)), up(random_matrix(rows, dout_, 2)), din(din_), dout(dout_) {
    auto wm = random_matrix(dout, din, 3);
    w = wm.data;
    b.assign(dout, 0.1);
  }
};

template <bool Parallel>
void BM_AffineForward(benchmark::State& st) {
  AffineCase c(static_cast<std::size_t>(st.range(0)), 64, 64);
  Matrix out;
  for (auto _ : st) {
    if constexpr (Parallel) kernels::affine_forward(c.in, c.w, c.b, out);
    else kernels::reference::affine_forward(c.in, c.w, c.b, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}

template <bool Parallel>
void BM_AffineBackward(benchmark::State& st) {
  AffineCase c(static_cast<std::size_t>(st.range(0)), 64, 64);
  std::vector<double> gw(c.w.size()), gb(c.b.size());
  Matrix din;
  for (auto _ : st) {
    if constexpr (Parallel) {
      kernels::affine_backward_params(c.in, c.up, gw, gb);
      kernels::affine_backward_input(c.up, c.w, c.din, din);
    } else {
      kernels::reference::affine_backward_params(c.in, c.up, gw, gb);
      kernels::reference::affine_backward_input(c.up, c.w, c.din, din);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

const JudgedDataset& judged() {
  static const JudgedDataset d = [] {
    SyntheticJudgedConfig sc;
    sc.n_queries = 200;
    return synthetic_judged(sc);
  }();
  return d;
}

template <bool Parallel>
void BM_GenerateLog(benchmark::State& st) {
  UserModelConfig cfg;
  cfg.swap_fraction = 0.3;
  LoggingPolicy policy;
  policy.kind = PolicyKind::kFeatureLinear;
  const auto n = static_cast<std::size_t>(st.range(0));
  for (auto _ : st) {
    auto sim = Parallel ? generate_log(judged(), policy, cfg, n, 1) : generate_log_serial(judged(), policy, cfg, n, 1);
    benchmark::DoNotOptimize(sim.log.sessions.data());
  }
}

template <bool Parallel>
void BM_InterventionIndex(benchmark::State& st) {
  UserModelConfig cfg;
  cfg.swap_fraction = 0.3;
  const auto log = generate_log(judged(), {}, cfg, static_cast<std::size_t>(st.range(0)), 2).log;
  for (auto _ : st) {
    auto idx = Parallel ? build_intervention_index(log) : build_intervention_index_serial(log);
    benchmark::DoNotOptimize(idx.query_docs.data());
  }
}

template <bool Parallel>
void BM_EvaluateRanker(benchmark::State& st) {
  const auto model = ScoringModel::init(Architecture{judged().num_features, {64, 64}, 0.0, PositionParams::kNone, 0}, 1);
  for (auto _ : st) {
    auto r = Parallel ? evaluate_ranker(model, judged()) : evaluate_ranker_serial(model, judged());
    benchmark::DoNotOptimize(r.mrr10);
  }
}

}  // namespace

BENCHMARK(BM_AffineForward<false>)->Name("affine_forward/serial")->Arg(1024)->Arg(16384);
BENCHMARK(BM_AffineForward<true>)->Name("affine_forward/openmp")->Arg(1024)->Arg(16384);
BENCHMARK(BM_AffineBackward<false>)->Name("affine_backward/serial")->Arg(1024)->Arg(16384);
BENCHMARK(BM_AffineBackward<true>)->Name("affine_backward/openmp")->Arg(1024)->Arg(16384);
BENCHMARK(BM_GenerateLog<false>)->Name("generate_log/serial")->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateLog<true>)->Name("generate_log/openmp")->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InterventionIndex<false>)->Name("intervention_index/serial")->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InterventionIndex<true>)->Name("intervention_index/openmp")->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateRanker<false>)->Name("evaluate_ranker/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateRanker<true>)->Name("evaluate_ranker/openmp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
