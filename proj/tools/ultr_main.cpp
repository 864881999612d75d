// Command-line front end: one subcommand per pipeline stage plus `run` for the
// whole experiment. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "ultr/corpus.hpp"
#include "ultr/error.hpp"
#include "ultr/eval.hpp"
#include "ultr/harness.hpp"
#include "ultr/propensity.hpp"
#include "ultr/simulate.hpp"
#include "ultr/train.hpp"

using namespace ultr;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string("missing required option ") + flag);
  return value;
}

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual learning-to-rank from click logs"};
  app.require_subcommand(1);
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--config", g.config, "JSON configuration file");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a click log from a judged set")->fallthrough();
  std::string sim_judged, sim_truth, sim_policy;
  std::size_t sim_sessions = 0, sim_synth_queries = 0;
  double sim_eta = 0, sim_eps = 0, sim_swap = 0, sim_sigma = 0;
  int sim_max_rank = 0;
  std::uint64_t sim_weight_seed = 0;
  sim->add_option("--judged", sim_judged, "LETOR judged file");
  sim->add_option("--synthetic-queries", sim_synth_queries, "Use the synthetic generator with this many queries");
  auto* o_sessions = sim->add_option("--n-sessions", sim_sessions);
  auto* o_eta = sim->add_option("--eta", sim_eta);
  auto* o_max_rank = sim->add_option("--max-rank", sim_max_rank);
  auto* o_eps = sim->add_option("--epsilon-minus", sim_eps);
  auto* o_swap = sim->add_option("--swap-fraction", sim_swap);
  auto* o_policy = sim->add_option("--policy", sim_policy)->check(CLI::IsMember({"oracle-noisy", "feature-linear"}));
  auto* o_sigma = sim->add_option("--noise-sigma", sim_sigma);
  auto* o_wseed = sim->add_option("--weight-seed", sim_weight_seed);
  sim->add_option("--truth-out", sim_truth, "Ground-truth sidecar (default <out>.truth.json)");

  // estimate-propensity
  auto* est = app.add_subcommand("estimate-propensity", "Estimate a propensity curve from a click log")->fallthrough();
  std::string est_method, est_log, est_pooling = "matched";
  int est_k = 0, est_pivot = 1;
  est->add_option("--method", est_method)->required()->check(CLI::IsMember({"adjacent-pair", "pivot-rank", "all-pairs"}));
  est->add_option("--log", est_log)->required();
  est->add_option("--num-ranks,--k", est_k, "Ranks to estimate (default: largest rank in the log)");
  est->add_option("--pivot", est_pivot);
  est->add_option("--pooling", est_pooling)->check(CLI::IsMember({"matched", "pooled"}));

  // train
  auto* tr = app.add_subcommand("train", "Train one model")->fallthrough();
  std::string tr_train, tr_val;
  tr->add_option("--train", tr_train)->required();
  tr->add_option("--val", tr_val)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Ranking and click metrics of a checkpoint")->fallthrough();
  std::string ev_model, ev_judged, ev_log, ev_curve;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--judged", ev_judged)->required();
  ev->add_option("--test-log", ev_log, "Click log for NLL");
  ev->add_option("--curve", ev_curve, "Propensity curve for IPS click predictions");

  // compare
  auto* cmp = app.add_subcommand("compare", "Significance tests between runs")->fallthrough();
  std::vector<std::string> cmp_runs;
  std::string cmp_base;
  double cmp_alpha = 0.01;
  cmp->add_option("--runs", cmp_runs, "<run_dir>[:<method>]")->required();
  cmp->add_option("--baseline", cmp_base)->required();
  cmp->add_option("--alpha", cmp_alpha);

  // run
  auto* run = app.add_subcommand("run", "Full experiment from a config")->fallthrough();

  // emit-plot-data
  auto* plot = app.add_subcommand("emit-plot-data", "Long-form CSV of propensity curves")->fallthrough();
  std::vector<std::string> plot_curves;
  std::string plot_log;
  plot->add_option("--curves", plot_curves);
  plot->add_option("--log", plot_log, "Click log whose per-rank CTR is added");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*sim) {
      DataConfig d;
      if (!g.config.empty()) {
        json j = read_json_file(g.config);
        d = data_config_from_json(j.contains("data") ? j.at("data") : j);
      }
      if (!sim_judged.empty()) d.judged_path = sim_judged;
      if (sim_synth_queries > 0) {
        SyntheticJudgedConfig s;
        s.n_queries = sim_synth_queries;
        s.seed = g.seed;
        d.synthetic = s;
      }
      if (*o_sessions) d.n_sessions = sim_sessions;
      if (*o_eta) d.user_model.eta = sim_eta;
      if (*o_max_rank) d.user_model.max_rank = sim_max_rank;
      if (*o_eps) d.user_model.epsilon_minus = sim_eps;
      if (*o_swap) d.user_model.swap_fraction = sim_swap;
      if (*o_policy) d.policy.kind = sim_policy == "oracle-noisy" ? PolicyKind::kOracleNoisy : PolicyKind::kFeatureLinear;
      if (*o_sigma) d.policy.noise_sigma = sim_sigma;
      if (*o_wseed) d.policy.weight_seed = sim_weight_seed;
      if (*seed_opt) d.seed = g.seed;
      if (d.judged_path.has_value() == d.synthetic.has_value())
        throw ValidationError("simulate needs exactly one of --judged or --synthetic-queries");
      d.user_model.validate();
      JudgedDataset ds = d.judged_path ? load_judged(*d.judged_path) : synthetic_judged(*d.synthetic);
      ds = filter_min_docs(ds, d.min_docs);
      SimulatedLog s = generate_log(ds, d.policy, d.user_model, d.n_sessions, d.seed);
      const std::string out = require(g.out, "--out");
      std::ostringstream log, side;
      write_click_log(log, s.log);
      write_truth_sidecar(side, s);
      write_file_atomic(out, log.str());
      write_file_atomic(sim_truth.empty() ? out + ".truth.json" : sim_truth, side.str());
      std::cout << "wrote " << s.log.sessions.size() << " sessions to " << out << '\n';
    } else if (*est) {
      ClickLog log = load_click_log(est_log);
      const int K = est_k > 0 ? est_k : log.n_ranks;
      const PairPooling pooling = est_pooling == "pooled" ? PairPooling::kPooled : PairPooling::kMatched;
      InterventionIndex idx = build_intervention_index(log);
      std::optional<PropensityCurve> c;
      if (est_method == "adjacent-pair") c = adjacent_pair(idx, K, {pooling});
      if (est_method == "pivot-rank") c = pivot_rank(idx, K, est_pivot, {pooling});
      if (est_method == "all-pairs") {
        AllPairsOptions o;
        o.pooling = pooling;
        c = all_pairs(idx, K, o);
      }
      const std::string text = c->to_json().dump(2) + "\n";
      if (g.out.empty()) std::cout << text;
      else write_file_atomic(g.out, text);
    } else if (*tr) {
      TrainConfig cfg = train_config_from_json(read_json_file(require(g.config, "--config")));
      if (*seed_opt) cfg.seed = g.seed;
      ClickLog train_log = load_click_log(tr_train);
      ClickLog val_log = load_click_log(tr_val);
      TrainedModel tm = train(train_log, val_log, cfg);
      const std::string out = require(g.out, "--out");
      save_checkpoint(out, tm.model, {{"method", std::string(to_string(cfg.loss.kind))}, {"train_config", to_json(cfg)}});
      std::cout << "best epoch " << tm.best_epoch << " of " << tm.stopped_epoch << ", validation loss "
                << tm.best_val_loss << '\n';
    } else if (*ev) {
      json meta;
      ScoringModel model = load_checkpoint(ev_model, &meta);
      JudgedDataset ds = load_judged(ev_judged);
      MetricReport r = evaluate_ranker(model, ds);
      if (!ev_log.empty()) {
        const LossKind kind = loss_kind_from_string(meta.value("method", std::string("naive-pointwise")));
        std::optional<PropensityCurve> curve;
        if (!ev_curve.empty()) curve = load_curve(ev_curve);
        else if (meta.contains("curve")) curve = PropensityCurve::from_json(meta.at("curve"));
        else if (meta.contains("train_config") && meta["train_config"].contains("curve"))
          curve = PropensityCurve::from_json(meta["train_config"]["curve"]);
        r.nll = click_nll(model, kind, curve, load_click_log(ev_log));
      }
      std::ostringstream csv;
      const auto cols = metric_columns(r);
      for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i].first;
      csv << '\n';
      for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << format_double(cols[i].second);
      csv << '\n';
      if (g.out.empty()) std::cout << csv.str();
      else write_file_atomic(g.out, csv.str());
    } else if (*cmp) {
      std::vector<RunRef> refs;
      for (const auto& r : cmp_runs) refs.push_back(parse_run_ref(r));
      auto rows = compare_runs(refs, parse_run_ref(cmp_base), cmp_alpha, g.out);
      for (const auto& r : rows)
        std::cout << r.run << ' ' << r.metric << " p=" << r.test.p
                  << (r.test.significance == Significance::kBetter  ? " better"
                      : r.test.significance == Significance::kWorse ? " worse"
                                                                    : "")
                  << '\n';
    } else if (*run) {
      ExperimentConfig cfg = experiment_config_from_json(read_json_file(require(g.config, "--config")));
      if (*seed_opt) cfg.data.seed = g.seed;
      PipelineResult res = run_pipeline(cfg, require(g.out, "--out"));
      if (!res.ok) {
        std::cerr << "error: stage '" << res.failed_stage << "' failed: " << res.error << '\n';
        return res.invalid_input ? 1 : 2;
      }
      std::ifstream table(std::filesystem::path(g.out) / "table.md");
      std::cout << table.rdbuf();
    } else if (*plot) {
      std::vector<PropensityCurve> curves;
      for (const auto& p : plot_curves) curves.push_back(load_curve(p));
      std::vector<std::optional<double>> ctr;
      if (!plot_log.empty()) ctr = ctr_by_rank(load_click_log(plot_log));
      std::ostringstream csv;
      emit_plot_data(csv, curves, ctr);
      if (g.out.empty()) std::cout << csv.str();
      else write_file_atomic(g.out, csv.str());
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
