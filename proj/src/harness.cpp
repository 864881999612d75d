#include "ultr/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "ultr/error.hpp"

namespace ultr {

namespace fs = std::filesystem;
using nlohmann::json;

// --- small utilities ---------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, end);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    f << content;
    if (!f) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!known) throw ValidationError("unknown key '" + it.key() + "' in " + where);
  }
}

SyntheticJudgedConfig synthetic_from_json(const json& j) {
  check_keys(j, {"n_queries", "docs_per_query", "n_informative", "n_noise", "feature_noise", "one_hot_grades", "seed"},
             "synthetic");
  SyntheticJudgedConfig c;
  c.n_queries = j.value("n_queries", c.n_queries);
  c.docs_per_query = j.value("docs_per_query", c.docs_per_query);
  c.n_informative = j.value("n_informative", c.n_informative);
  c.n_noise = j.value("n_noise", c.n_noise);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.one_hot_grades = j.value("one_hot_grades", c.one_hot_grades);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const SyntheticJudgedConfig& c) {
  return {{"n_queries", c.n_queries},         {"docs_per_query", c.docs_per_query}, {"n_informative", c.n_informative},
          {"n_noise", c.n_noise},             {"feature_noise", c.feature_noise},   {"one_hot_grades", c.one_hot_grades},
          {"seed", c.seed}};
}

std::string_view to_string(PolicyKind k) { return k == PolicyKind::kOracleNoisy ? "oracle-noisy" : "feature-linear"; }
PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "oracle-noisy") return PolicyKind::kOracleNoisy;
  if (s == "feature-linear") return PolicyKind::kFeatureLinear;
  throw ValidationError("unknown logging policy '" + s + "'");
}

std::string_view to_string(PairPooling p) { return p == PairPooling::kPooled ? "pooled" : "matched"; }
PairPooling pooling_from_string(const std::string& s) {
  if (s == "pooled") return PairPooling::kPooled;
  if (s == "matched") return PairPooling::kMatched;
  throw ValidationError("unknown pooling '" + s + "'");
}

template <class F>
auto wrap_json(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid " + where + ": " + e.what());
  }
}

}  // namespace

// --- configuration -----------------------------------------------------------

DataConfig data_config_from_json(const json& j) {
  check_keys(j,
             {"judged", "synthetic", "eval_judged", "eval_synthetic", "user_model", "policy", "n_sessions", "seed",
              "train_log", "val_log", "test_log", "min_docs", "split", "write_log"},
             "data");
  return wrap_json("data config", [&] {
    DataConfig d;
    if (j.contains("judged")) d.judged_path = j.at("judged").get<std::string>();
    if (j.contains("synthetic")) d.synthetic = synthetic_from_json(j.at("synthetic"));
    if (j.contains("eval_judged")) d.eval_judged_path = j.at("eval_judged").get<std::string>();
    if (j.contains("eval_synthetic")) d.eval_synthetic = synthetic_from_json(j.at("eval_synthetic"));
    if (j.contains("user_model")) {
      const auto& u = j.at("user_model");
      check_keys(u, {"eta", "max_rank", "epsilon_minus", "max_grade", "swap_fraction"}, "user_model");
      d.user_model.eta = u.value("eta", d.user_model.eta);
      d.user_model.max_rank = u.value("max_rank", d.user_model.max_rank);
      d.user_model.epsilon_minus = u.value("epsilon_minus", d.user_model.epsilon_minus);
      d.user_model.max_grade = u.value("max_grade", d.user_model.max_grade);
      d.user_model.swap_fraction = u.value("swap_fraction", d.user_model.swap_fraction);
    }
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      check_keys(p, {"kind", "noise_sigma", "weight_seed"}, "policy");
      if (p.contains("kind")) d.policy.kind = policy_kind_from_string(p.at("kind").get<std::string>());
      d.policy.noise_sigma = p.value("noise_sigma", d.policy.noise_sigma);
      d.policy.weight_seed = p.value("weight_seed", d.policy.weight_seed);
    }
    d.n_sessions = j.value("n_sessions", d.n_sessions);
    d.seed = j.value("seed", d.seed);
    if (j.contains("train_log")) d.train_log = j.at("train_log").get<std::string>();
    if (j.contains("val_log")) d.val_log = j.at("val_log").get<std::string>();
    if (j.contains("test_log")) d.test_log = j.at("test_log").get<std::string>();
    d.min_docs = j.value("min_docs", d.min_docs);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train", "validation", "test"}, "split");
      d.split.train = s.value("train", d.split.train);
      d.split.validation = s.value("validation", d.split.validation);
      d.split.test = s.value("test", d.split.test);
    }
    d.write_log = j.value("write_log", d.write_log);
    return d;
  });
}

json to_json(const DataConfig& d) {
  json j;
  if (d.judged_path) j["judged"] = *d.judged_path;
  if (d.synthetic) j["synthetic"] = to_json(*d.synthetic);
  if (d.eval_judged_path) j["eval_judged"] = *d.eval_judged_path;
  if (d.eval_synthetic) j["eval_synthetic"] = to_json(*d.eval_synthetic);
  if (d.simulated()) {
    j["user_model"] = {{"eta", d.user_model.eta},
                       {"max_rank", d.user_model.max_rank},
                       {"epsilon_minus", d.user_model.epsilon_minus},
                       {"max_grade", d.user_model.max_grade},
                       {"swap_fraction", d.user_model.swap_fraction}};
    j["policy"] = {{"kind", std::string(to_string(d.policy.kind))},
                   {"noise_sigma", d.policy.noise_sigma},
                   {"weight_seed", d.policy.weight_seed}};
    j["n_sessions"] = d.n_sessions;
    j["split"] = {{"train", d.split.train}, {"validation", d.split.validation}, {"test", d.split.test}};
    j["write_log"] = d.write_log;
  } else {
    j["train_log"] = *d.train_log;
    if (d.val_log) j["val_log"] = *d.val_log;
    if (d.test_log) j["test_log"] = *d.test_log;
  }
  j["seed"] = d.seed;
  j["min_docs"] = d.min_docs;
  return j;
}

std::string_view to_string(PropensitySource s) {
  switch (s) {
    case PropensitySource::kGroundTruth: return "ground-truth";
    case PropensitySource::kAdjacentPair: return "adjacent-pair";
    case PropensitySource::kPivotRank: return "pivot-rank";
    case PropensitySource::kAllPairs: return "all-pairs";
  }
  return "ground-truth";
}

PropensitySource propensity_source_from_string(std::string_view s) {
  for (auto v : {PropensitySource::kGroundTruth, PropensitySource::kAdjacentPair, PropensitySource::kPivotRank,
                 PropensitySource::kAllPairs})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown propensity source '" + std::string(s) + "'");
}

void ExperimentConfig::validate() const {
  const int sources = data.judged_path.has_value() + data.synthetic.has_value() + data.train_log.has_value();
  if (sources != 1) throw ValidationError("data needs exactly one of 'judged', 'synthetic' or 'train_log'");
  if (data.simulated()) {
    data.user_model.validate();
    if (data.n_sessions == 0) throw ValidationError("n_sessions must be positive");
  } else {
    if (!data.val_log || !data.test_log) throw ValidationError("external logs need train_log, val_log and test_log");
    if (!data.eval_judged_path && !data.eval_synthetic)
      throw ValidationError("external logs need a judged evaluation set ('eval_judged')");
    if (propensity == PropensitySource::kGroundTruth &&
        std::any_of(methods.begin(), methods.end(), requires_curve))
      throw ValidationError("ground-truth propensities are only available for simulated logs");
  }
  if (data.min_docs == 0) throw ValidationError("min_docs must be at least 1");
  if (methods.empty()) throw ValidationError("at least one method is required");
  if (seeds.empty()) throw ValidationError("at least one seed is required");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (propensity_ranks < 0) throw ValidationError("propensity_ranks must be non-negative");
  TrainConfig probe = train;
  probe.loss.kind = LossKind::kNaivePointwise;
  probe.loss.curve.reset();
  probe.validate();
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j,
             {"data", "methods", "method", "propensity", "propensity_ranks", "pooling", "train", "seeds", "alpha", "gain",
              "save_checkpoints"},
             "experiment config");
  return wrap_json("experiment config", [&] {
    ExperimentConfig c;
    if (!j.contains("data")) throw ValidationError("experiment config needs a 'data' block");
    c.data = data_config_from_json(j.at("data"));
    if (j.contains("methods"))
      for (const auto& m : j.at("methods")) c.methods.push_back(loss_kind_from_string(m.get<std::string>()));
    if (j.contains("method")) c.methods.push_back(loss_kind_from_string(j.at("method").get<std::string>()));
    if (j.contains("propensity")) c.propensity = propensity_source_from_string(j.at("propensity").get<std::string>());
    c.propensity_ranks = j.value("propensity_ranks", c.propensity_ranks);
    if (j.contains("pooling")) c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    if (j.contains("train")) {
      if (j.at("train").contains("loss") || j.at("train").contains("curve") || j.at("train").contains("curve_path"))
        throw ValidationError("train block must not set 'loss' or a curve; use 'methods' and 'propensity'");
      c.train = train_config_from_json(j.at("train"));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("gain")) {
      const auto g = j.at("gain").get<std::string>();
      if (g == "linear") c.gain = Gain::kLinear;
      else if (g == "exponential") c.gain = Gain::kExponential;
      else throw ValidationError("unknown gain '" + g + "'");
    }
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
    c.validate();
    return c;
  });
}

json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(std::string(to_string(m)));
  json train = to_json(c.train);
  train.erase("loss");
  train.erase("seed");
  train.erase("curve");
  return {{"data", to_json(c.data)},
          {"methods", methods},
          {"propensity", std::string(to_string(c.propensity))},
          {"propensity_ranks", c.propensity_ranks},
          {"pooling", std::string(to_string(c.pooling))},
          {"train", train},
          {"seeds", c.seeds},
          {"alpha", c.alpha},
          {"gain", c.gain == Gain::kLinear ? "linear" : "exponential"},
          {"save_checkpoints", c.save_checkpoints}};
}

// --- reporting helpers -------------------------------------------------------

namespace {

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"dcg@1", "dcg@3", "dcg@5", "dcg@10", "mrr@10", "nll"};
  return names;
}

std::optional<double> metric_value(const MetricReport& r, const std::string& name) {
  for (const auto& [k, v] : metric_columns(r))
    if (k == name) return v;
  return std::nullopt;
}

std::string mark(Significance s) {
  switch (s) {
    case Significance::kBetter: return "▲";
    case Significance::kWorse: return "▼";
    case Significance::kNone: return "";
  }
  return "";
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::string curve_json(const PropensityCurve& c) { return c.to_json().dump(2) + "\n"; }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError("bad number '" + s + "' in " + where);
  return v;
}

struct Recorder {
  fs::path root;
  std::vector<fs::path> written;

  void write(const fs::path& rel, const std::string& content) {
    write_file_atomic(root / rel, content);
    written.push_back(rel);
  }
};

std::string table_markdown(const ExperimentConfig& cfg, const PipelineResult& res) {
  // Each non-naive method is compared with the naive method of its group when
  // that naive method was also run.
  std::map<LossKind, const MethodResult*> by_kind;
  for (const auto& m : res.methods) by_kind[m.kind] = &m;

  struct Cell {
    std::string metric;
    double mean = 0.0, sd = 0.0;
    bool present = false;
    Significance sig = Significance::kNone;
  };
  std::vector<std::pair<std::string, std::vector<Cell>>> rows;
  std::size_t n_tests = 0;
  std::vector<std::tuple<std::size_t, std::size_t, std::vector<double>, std::vector<double>, bool>> pending;

  auto fill_cells = [&](const MetricSummary& s) {
    std::vector<Cell> cells;
    for (const auto& name : metric_names()) {
      Cell c;
      c.metric = name;
      auto m = metric_value(s.mean, name);
      if (m) {
        c.present = true;
        c.mean = *m;
        c.sd = metric_value(s.sd, name).value_or(0.0);
      }
      cells.push_back(c);
    }
    return cells;
  };

  rows.emplace_back("random", fill_cells(res.random));
  for (const auto& m : res.methods) {
    rows.emplace_back(std::string(to_string(m.kind)), fill_cells(summarize(m.reports)));
    const LossKind base = naive_of(group_of(m.kind));
    if (base == m.kind || !by_kind.count(base)) continue;
    const MethodResult& b = *by_kind.at(base);
    for (std::size_t mi = 0; mi < metric_names().size(); ++mi) {
      const auto& name = metric_names()[mi];
      std::vector<double> a, bb;
      for (std::size_t s = 0; s < m.reports.size() && s < b.reports.size(); ++s) {
        auto va = metric_value(m.reports[s], name);
        auto vb = metric_value(b.reports[s], name);
        if (va && vb) {
          a.push_back(*va);
          bb.push_back(*vb);
        }
      }
      if (a.size() < 2 || a.size() != m.reports.size()) continue;
      pending.emplace_back(rows.size() - 1, mi, a, bb, higher_is_better(name));
      ++n_tests;
    }
  }
  for (auto& [row, mi, a, b, hib] : pending)
    rows[row].second[mi].sig = paired_ttest(a, b, cfg.alpha, n_tests, hib).significance;

  std::ostringstream md;
  md << "| Method |";
  for (const auto& n : metric_names()) md << ' ' << n << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < metric_names().size(); ++i) md << "---|";
  md << '\n';
  for (const auto& [name, cells] : rows) {
    md << "| " << name << " |";
    for (const auto& c : cells) {
      if (!c.present) {
        md << " - |";
        continue;
      }
      md << ' ' << fixed(c.mean) << " (" << fixed(c.sd) << ')' << mark(c.sig) << " |";
    }
    md << '\n';
  }
  md << "\nMean (sample sd) over " << cfg.seeds.size() << " seeds. ▲/▼: significantly better/worse than the naive "
     << "method of the same family (paired two-sided t-test, p < " << format_double(cfg.alpha) << " / " << n_tests
     << ").\n";
  return md.str();
}

std::string metrics_csv(const PipelineResult& res) {
  std::ostringstream csv;
  csv << "method,seed";
  for (const auto& n : metric_names()) csv << ',' << n;
  csv << ",best_epoch,stopped_epoch,best_val_loss\n";
  for (const auto& m : res.methods) {
    for (std::size_t s = 0; s < m.reports.size(); ++s) {
      csv << to_string(m.kind) << ',' << m.seeds[s];
      for (const auto& n : metric_names()) {
        csv << ',';
        if (auto v = metric_value(m.reports[s], n)) csv << format_double(*v);
      }
      const auto& tm = m.models[s];
      csv << ',' << tm.best_epoch << ',' << tm.stopped_epoch << ',' << format_double(tm.best_val_loss) << '\n';
    }
  }
  return csv.str();
}

}  // namespace

void emit_plot_data(std::ostream& out, const std::vector<PropensityCurve>& curves,
                    const std::vector<std::optional<double>>& ctr) {
  out << "method,rank,value\n";
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.values().size(); ++k)
      out << to_string(c.method()) << ',' << k + 1 << ',' << format_double(c.values()[k]) << '\n';
  for (std::size_t k = 0; k < ctr.size(); ++k)
    if (ctr[k]) out << "ctr," << k + 1 << ',' << format_double(*ctr[k]) << '\n';
}

// --- pipeline ----------------------------------------------------------------

PipelineResult run_pipeline(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  fs::create_directories(out);
  Recorder rec{out, {}};
  PipelineResult res;
  std::string stage = "load";

  try {
    const DataConfig& d = cfg.data;
    auto load_set = [&](const std::optional<std::string>& path, const std::optional<SyntheticJudgedConfig>& syn) {
      JudgedDataset ds = path ? load_judged(*path) : synthetic_judged(*syn);
      return filter_min_docs(ds, d.min_docs);
    };

    std::optional<JudgedDataset> sim_set;
    if (d.simulated()) sim_set = load_set(d.judged_path, d.synthetic);
    JudgedDataset eval_set = (d.eval_judged_path || d.eval_synthetic) ? load_set(d.eval_judged_path, d.eval_synthetic)
                                                                      : *sim_set;

    LogSplit parts;
    if (d.simulated()) {
      stage = "simulate";
      SimulatedLog sim = generate_log(*sim_set, d.policy, d.user_model, d.n_sessions, d.seed);
      res.truth = sim.truth;
      std::ostringstream side;
      write_truth_sidecar(side, sim);
      rec.write("ground_truth.json", side.str());
      if (d.write_log) {
        std::ostringstream lg;
        write_click_log(lg, sim.log);
        rec.write("clicks.jsonl", lg.str());
      }
      stage = "split";
      parts = split_log(sim.log, d.split, d.seed);
    } else {
      parts.train = filter_min_docs(load_click_log(*d.train_log), d.min_docs);
      parts.validation = filter_min_docs(load_click_log(*d.val_log), d.min_docs);
      parts.test = filter_min_docs(load_click_log(*d.test_log), d.min_docs);
    }
    if (parts.train.sessions.empty() || parts.validation.sessions.empty())
      throw ValidationError("training and validation logs must not be empty");

    stage = "propensity";
    const int K = cfg.propensity_ranks > 0 ? cfg.propensity_ranks : parts.train.n_ranks;
    {
      const InterventionIndex idx = build_intervention_index(parts.train);
      std::map<PropensitySource, std::string> errors;
      for (auto src : {PropensitySource::kAdjacentPair, PropensitySource::kPivotRank, PropensitySource::kAllPairs}) {
        try {
          std::optional<PropensityCurve> c;
          if (src == PropensitySource::kAdjacentPair) c = adjacent_pair(idx, K, {cfg.pooling});
          if (src == PropensitySource::kPivotRank) c = pivot_rank(idx, K, 1, {cfg.pooling});
          if (src == PropensitySource::kAllPairs) {
            AllPairsOptions o;
            o.pooling = cfg.pooling;
            c = all_pairs(idx, K, o);
          }
          res.estimated.emplace(std::string(to_string(src)), *c);
          rec.write("propensity_" + std::string(to_string(src)) + ".json", curve_json(*c));
        } catch (const EstimationError& e) {
          errors[src] = e.what();
        }
      }
      std::vector<PropensityCurve> curves;
      if (res.truth) curves.push_back(*res.truth);
      for (const auto& [name, c] : res.estimated) curves.push_back(c);
      std::ostringstream plot;
      emit_plot_data(plot, curves, ctr_by_rank(parts.train));
      rec.write("plot_data.csv", plot.str());

      if (std::any_of(cfg.methods.begin(), cfg.methods.end(), requires_curve)) {
        if (cfg.propensity == PropensitySource::kGroundTruth) {
          res.ips_curve = *res.truth;
        } else {
          auto it = res.estimated.find(std::string(to_string(cfg.propensity)));
          if (it == res.estimated.end())
            throw EstimationError(std::string(to_string(cfg.propensity)) + ": " + errors[cfg.propensity]);
          res.ips_curve = it->second;
        }
      }
    }

    std::ostringstream history;
    history << "method,seed,epoch,train_loss,val_loss\n";
    for (LossKind kind : cfg.methods) {
      MethodResult mr{kind, {}, {}, {}};
      for (std::uint64_t seed : cfg.seeds) {
        stage = "train";
        TrainConfig tc = cfg.train;
        tc.loss.kind = kind;
        tc.loss.curve = requires_curve(kind) ? res.ips_curve : std::nullopt;
        tc.seed = seed;
        TrainedModel tm = train(parts.train, parts.validation, tc);
        for (const auto& h : tm.history)
          history << to_string(kind) << ',' << seed << ',' << h.epoch << ',' << format_double(h.train_loss) << ','
                  << format_double(h.val_loss) << '\n';
        if (cfg.save_checkpoints) {
          const std::string rel = "checkpoints/" + std::string(to_string(kind)) + "-seed" + std::to_string(seed) + ".json";
          fs::create_directories(out / "checkpoints");
          json extra = {{"method", std::string(to_string(kind))}, {"seed", seed}, {"best_epoch", tm.best_epoch}};
          if (tc.loss.curve) extra["curve"] = tc.loss.curve->to_json();
          save_checkpoint((out / rel).string(), tm.model, extra);
          rec.written.push_back(rel);
          rec.written.push_back(rel + ".bin");
        }
        stage = "evaluate";
        MetricReport r = evaluate_ranker(tm.model, eval_set, cfg.gain);
        if (!parts.test.sessions.empty()) r.nll = click_nll(tm.model, kind, tc.loss.curve, parts.test);
        mr.seeds.push_back(seed);
        mr.reports.push_back(std::move(r));
        mr.models.push_back(std::move(tm));
      }
      res.methods.push_back(std::move(mr));
    }

    stage = "report";
    res.random = random_baseline(eval_set, cfg.seeds.size(), d.seed);
    rec.write("history.csv", history.str());
    rec.write("metrics.csv", metrics_csv(res));
    rec.write("table.md", table_markdown(cfg, res));
  } catch (const std::exception& e) {
    res.ok = false;
    res.invalid_input = dynamic_cast<const ValidationError*>(&e) != nullptr;
    res.failed_stage = stage;
    res.error = e.what();
  }

  json manifest = {{"tool", kToolVersion}, {"status", res.ok ? "ok" : "failed"}, {"config", to_json(cfg)}};
  if (!res.ok) {
    manifest["failed_stage"] = res.failed_stage;
    manifest["error"] = res.error;
  }
  json outputs = json::object();
  for (const auto& rel : rec.written) outputs[rel.generic_string()] = sha256_hex(read_file(out / rel));
  manifest["outputs"] = outputs;
  write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

// --- comparison --------------------------------------------------------------

RunRef parse_run_ref(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon != std::string::npos && colon + 1 < s.size() && s.find('/', colon) == std::string::npos)
    return {s.substr(0, colon), s.substr(colon + 1)};
  return {s, std::nullopt};
}

namespace {

struct RunMetrics {
  std::string label;
  std::map<std::uint64_t, std::map<std::string, double>> by_seed;
};

RunMetrics load_run(const RunRef& ref) {
  const fs::path csv_path = ref.dir / "metrics.csv";
  std::istringstream in(read_file(csv_path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + csv_path.string() + "' is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "method" || header[1] != "seed")
    throw ValidationError("'" + csv_path.string() + "' is not a metrics file");

  std::map<std::string, std::vector<std::vector<std::string>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ValidationError("ragged row in '" + csv_path.string() + "'");
    rows[cells[0]].push_back(std::move(cells));
  }
  std::string method;
  if (ref.method) {
    if (!rows.count(*ref.method))
      throw ValidationError("run '" + ref.dir.string() + "' has no method '" + *ref.method + "'");
    method = *ref.method;
  } else {
    if (rows.size() != 1)
      throw ValidationError("run '" + ref.dir.string() + "' holds " + std::to_string(rows.size()) +
                            " methods; select one with <dir>:<method>");
    method = rows.begin()->first;
  }

  RunMetrics rm;
  rm.label = ref.dir.filename().string() + ":" + method;
  const auto& names = metric_names();
  for (const auto& cells : rows.at(method)) {
    const auto seed = static_cast<std::uint64_t>(parse_number(cells[1], csv_path.string()));
    auto& m = rm.by_seed[seed];
    for (std::size_t c = 2; c < header.size(); ++c)
      if (std::find(names.begin(), names.end(), header[c]) != names.end() && !cells[c].empty())
        m[header[c]] = parse_number(cells[c], csv_path.string());
  }
  return rm;
}

}  // namespace

std::vector<ComparisonRow> compare_runs(const std::vector<RunRef>& runs, const RunRef& baseline, double alpha,
                                        const fs::path& out) {
  if (runs.empty()) throw ValidationError("nothing to compare");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const RunMetrics base = load_run(baseline);

  struct Pending {
    std::string run, metric;
    std::vector<double> a, b;
  };
  std::vector<Pending> tests;
  for (const auto& ref : runs) {
    const RunMetrics rm = load_run(ref);
    if (rm.by_seed.size() != base.by_seed.size())
      throw ValidationError("seed count mismatch: " + rm.label + " has " + std::to_string(rm.by_seed.size()) +
                            " seeds, baseline " + base.label + " has " + std::to_string(base.by_seed.size()));
    for (const auto& [seed, _] : rm.by_seed)
      if (!base.by_seed.count(seed))
        throw ValidationError("seed " + std::to_string(seed) + " of " + rm.label + " is missing from the baseline");
    for (const auto& name : metric_names()) {
      Pending p{rm.label, name, {}, {}};
      bool all = true;
      for (const auto& [seed, m] : rm.by_seed) {
        const auto& bm = base.by_seed.at(seed);
        if (!m.count(name) || !bm.count(name)) {
          all = false;
          break;
        }
        p.a.push_back(m.at(name));
        p.b.push_back(bm.at(name));
      }
      if (all && !p.a.empty()) tests.push_back(std::move(p));
    }
  }

  std::vector<ComparisonRow> rows;
  for (auto& p : tests) {
    ComparisonRow r;
    r.run = p.run;
    r.metric = p.metric;
    for (double v : p.a) r.mean += v / static_cast<double>(p.a.size());
    for (double v : p.b) r.baseline_mean += v / static_cast<double>(p.b.size());
    r.test = paired_ttest(p.a, p.b, alpha, tests.size(), higher_is_better(p.metric));
    rows.push_back(std::move(r));
  }

  if (!out.empty()) {
    std::ostringstream csv;
    csv << "run,metric,mean,baseline_mean,mean_diff,t,p,significance\n";
    for (const auto& r : rows) {
      const char* sig = r.test.significance == Significance::kBetter  ? "better"
                        : r.test.significance == Significance::kWorse ? "worse"
                                                                      : "";
      csv << r.run << ',' << r.metric << ',' << format_double(r.mean) << ',' << format_double(r.baseline_mean) << ','
          << format_double(r.test.mean_diff) << ',' << format_double(r.test.t) << ',' << format_double(r.test.p) << ','
          << sig << '\n';
    }
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, const ComparisonRow*>> grid;
    for (const auto& r : rows) {
      if (!grid.count(r.run)) order.push_back(r.run);
      grid[r.run][r.metric] = &r;
    }
    std::ostringstream md;
    md << "| Run |";
    for (const auto& n : metric_names()) md << ' ' << n << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < metric_names().size(); ++i) md << "---|";
    md << "\n| " << base.label << " (baseline) |";
    for (const auto& n : metric_names()) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const ComparisonRow& r) { return r.metric == n; });
      md << ' ' << (it == rows.end() ? std::string("-") : fixed(it->baseline_mean)) << " |";
    }
    md << '\n';
    for (const auto& run : order) {
      md << "| " << run << " |";
      for (const auto& n : metric_names()) {
        auto it = grid[run].find(n);
        if (it == grid[run].end()) md << " - |";
        else md << ' ' << fixed(it->second->mean) << mark(it->second->test.significance) << " |";
      }
      md << '\n';
    }
    md << "\nPaired two-sided t-test against " << base.label << ", significant at p < " << format_double(alpha) << " / "
       << tests.size() << ".\n";
    fs::path md_path = out, csv_path = out;
    md_path += ".md";
    csv_path += ".csv";
    write_file_atomic(md_path, md.str());
    write_file_atomic(csv_path, csv.str());
  }
  return rows;
}

}  // namespace ultr
