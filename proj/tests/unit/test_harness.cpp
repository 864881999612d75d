#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ultr/error.hpp"
#include "ultr/harness.hpp"

using namespace ultr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / "ultr_harness_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig tiny(std::vector<LossKind> methods, std::vector<std::uint64_t> seeds = {0}) {
  ExperimentConfig cfg;
  SyntheticJudgedConfig sc;
  sc.n_queries = 20;
  sc.docs_per_query = 10;
  cfg.data.synthetic = sc;
  cfg.data.n_sessions = 800;
  cfg.data.user_model.swap_fraction = 0.3;
  cfg.methods = std::move(methods);
  cfg.seeds = std::move(seeds);
  cfg.train.lr = 0.01;
  cfg.train.max_epochs = 3;
  cfg.train.patience = 2;
  cfg.train.batch_size = 64;
  return cfg;
}

nlohmann::json manifest_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

void write(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << s;
}

}  // namespace

TEST_CASE("smoke pipeline") {
  const auto dir = scratch("smoke");
  auto res = run_pipeline(tiny({LossKind::kNaivePointwise}), dir);
  REQUIRE(res.ok);
  CHECK(fs::exists(dir / "checkpoints" / "naive-pointwise-seed0.json"));
  CHECK(fs::exists(dir / "checkpoints" / "naive-pointwise-seed0.json.bin"));
  std::size_t checkpoints = 0;
  for (const auto& e : fs::directory_iterator(dir / "checkpoints")) checkpoints += e.path().extension() == ".json";
  CHECK(checkpoints == 1);

  std::istringstream metrics(slurp(dir / "metrics.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(metrics, line)) lines.push_back(line);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "method,seed,dcg@1,dcg@3,dcg@5,dcg@10,mrr@10,nll,best_epoch,stopped_epoch,best_val_loss");
  CHECK(lines[1].rfind("naive-pointwise,0,", 0) == 0);

  auto m = manifest_of(dir);
  CHECK(m.at("status") == "ok");
  CHECK(m.at("tool") == kToolVersion);
  CHECK(m.at("config").at("methods") == nlohmann::json::array({"naive-pointwise"}));
  for (const char* f : {"ground_truth.json", "metrics.csv", "table.md", "history.csv", "plot_data.csv",
                        "propensity_all-pairs.json"})
    CHECK(m.at("outputs").contains(f));
  CHECK(slurp(dir / "table.md").find("naive-pointwise") != std::string::npos);
}

TEST_CASE("manifest lists every output with its hash") {
  const auto dir = scratch("manifest");
  auto cfg = tiny({LossKind::kNaivePointwise, LossKind::kIpsPointwise});
  cfg.data.write_log = true;
  REQUIRE(run_pipeline(cfg, dir).ok);
  const auto outputs = manifest_of(dir).at("outputs");
  std::set<std::string> listed;
  for (const auto& [rel, hash] : outputs.items()) {
    listed.insert(rel);
    CHECK(hash.get<std::string>() == sha256_hex(slurp(dir / rel)));
  }
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    CAPTURE(rel);
    if (rel != "manifest.json") CHECK(listed.count(rel) == 1);
  }
  CHECK(listed.count("clicks.jsonl") == 1);
}

TEST_CASE("identical configs give identical hashes") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  auto cfg = tiny({LossKind::kTwoTower, LossKind::kDla}, {0, 1});
  cfg.train.hidden_dims = {8};
  cfg.train.dropout = 0.1;
  REQUIRE(run_pipeline(cfg, a).ok);
  REQUIRE(run_pipeline(cfg, b).ok);
  CHECK(manifest_of(a).at("outputs") == manifest_of(b).at("outputs"));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
}

TEST_CASE("a failing stage is recorded and partial outputs are kept") {
  const auto dir = scratch("fail");
  auto cfg = tiny({LossKind::kIpsPointwise});
  cfg.propensity = PropensitySource::kAdjacentPair;
  cfg.data.user_model.swap_fraction = 0.0;
  cfg.data.policy.noise_sigma = 0.0;  // every document always at one rank: nothing to harvest
  auto res = run_pipeline(cfg, dir);
  CHECK_FALSE(res.ok);
  CHECK(res.failed_stage == "propensity");
  auto m = manifest_of(dir);
  CHECK(m.at("status") == "failed");
  CHECK(m.at("failed_stage") == "propensity");
  CHECK(m.at("outputs").contains("ground_truth.json"));
  CHECK(fs::exists(dir / "ground_truth.json"));
  CHECK_FALSE(fs::exists(dir / "metrics.csv"));
}

TEST_CASE("IPS with all-pairs propensities beats naive on a biased log") {
  const auto dir = scratch("ips");
  ExperimentConfig cfg;
  SyntheticJudgedConfig sc;
  sc.seed = 1;
  cfg.data.synthetic = sc;
  sc.seed = 2;
  cfg.data.eval_synthetic = sc;
  cfg.data.user_model.eta = 1.0;
  cfg.data.user_model.max_rank = 10;
  cfg.data.user_model.swap_fraction = 0.3;
  cfg.data.policy.kind = PolicyKind::kFeatureLinear;
  cfg.data.policy.weight_seed = 11;
  cfg.data.n_sessions = 30000;
  cfg.methods = {LossKind::kNaivePointwise, LossKind::kIpsPointwise};
  cfg.propensity = PropensitySource::kAllPairs;
  cfg.seeds = {0, 1};
  cfg.train.lr = 0.01;
  cfg.train.max_epochs = 15;
  cfg.train.patience = 3;
  auto res = run_pipeline(cfg, dir);
  REQUIRE(res.ok);
  REQUIRE(res.ips_curve);
  CHECK(res.ips_curve->method() == CurveMethod::kAllPairs);
  auto mean10 = [](const MethodResult& m) { return summarize(m.reports).mean.dcg.at(10); };
  CHECK(mean10(res.methods[1]) > mean10(res.methods[0]));
}

TEST_CASE("compare") {
  const auto root = scratch("compare");
  const std::string header = "method,seed,dcg@10\n";
  write(root / "base" / "metrics.csv", header + "naive,0,1.0\nnaive,1,2.0\nnaive,2,3.0\nnaive,3,4.0\nnaive,4,5.0\n");
  write(root / "better" / "metrics.csv",
        header + "ips,0,2.5\nips,1,4.5\nips,2,6.5\nips,3,8.5\nips,4,10.5\n");  // diffs 1.5..5.5
  write(root / "short" / "metrics.csv", header + "ips,0,2.0\nips,1,3.0\n");

  SUBCASE("self comparison has no marks") {
    auto rows = compare_runs({{root / "base", std::nullopt}}, {root / "base", std::nullopt}, 0.01, root / "self");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].test.significance == Significance::kNone);
    CHECK(slurp(root / "self.md").find("▲") == std::string::npos);
    CHECK(slurp(root / "self.md").find("▼") == std::string::npos);
  }
  SUBCASE("one run and one metric use the plain alpha") {
    auto rows = compare_runs({{root / "better", std::nullopt}}, {root / "base", std::nullopt}, 0.01, root / "cmp");
    REQUIRE(rows.size() == 1);
    // diffs 1.5, 2.5, 3.5, 4.5, 5.5: t = 3.5 / (sqrt(2.5) / sqrt(5)), p about 0.0078
    CHECK(rows[0].test.t == doctest::Approx(3.5 / std::sqrt(0.5)).epsilon(1e-12));
    CHECK(rows[0].test.p > 0.005);
    CHECK(rows[0].test.p < 0.01);
    CHECK(rows[0].test.significance == Significance::kBetter);
    CHECK(rows[0].mean == doctest::Approx(6.5));
    CHECK(rows[0].baseline_mean == doctest::Approx(3.0));
    CHECK(slurp(root / "cmp.md").find("▲") != std::string::npos);
    CHECK(slurp(root / "cmp.csv").find("better") != std::string::npos);
  }
  SUBCASE("two tests halve alpha") {
    write(root / "both" / "metrics.csv", header + "ips,0,2.5\nips,1,4.5\nips,2,6.5\nips,3,8.5\nips,4,10.5\n" +
                                             "dla,0,2.5\ndla,1,4.5\ndla,2,6.5\ndla,3,8.5\ndla,4,10.5\n");
    auto rows = compare_runs({{root / "both", "ips"}, {root / "both", "dla"}}, {root / "base", std::nullopt}, 0.01, {});
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) CHECK(r.test.significance == Significance::kNone);
  }
  SUBCASE("seed mismatch is an error") {
    CHECK_THROWS_AS(compare_runs({{root / "short", std::nullopt}}, {root / "base", std::nullopt}, 0.01, {}),
                    ValidationError);
  }
  SUBCASE("run references") {
    auto r = parse_run_ref("runs/a:dla");
    CHECK(r.dir == fs::path("runs/a"));
    CHECK(r.method == "dla");
    CHECK_FALSE(parse_run_ref("runs/a").method);
    CHECK_THROWS_AS(compare_runs({{root / "both_missing", std::nullopt}}, {root / "base", std::nullopt}, 0.01, {}),
                    ValidationError);
  }
}

TEST_CASE("plot data") {
  std::ostringstream empty;
  emit_plot_data(empty, {});
  CHECK(empty.str() == "method,rank,value\n");

  std::ostringstream one;
  emit_plot_data(one, {PropensityCurve(CurveMethod::kPivotRank, {1.0, 0.5, 0.25})}, {0.4, std::nullopt, 0.1});
  CHECK(one.str() ==
        "method,rank,value\npivot-rank,1,1\npivot-rank,2,0.5\npivot-rank,3,0.25\nctr,1,0.4\nctr,3,0.1\n");
}

TEST_CASE("experiment config JSON") {
  auto cfg = tiny({LossKind::kDla, LossKind::kIpsListwise});
  cfg.propensity = PropensitySource::kPivotRank;
  auto back = experiment_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.methods == cfg.methods);
  CHECK(back.propensity == PropensitySource::kPivotRank);

  auto j = to_json(cfg);
  j["bogus"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = to_json(cfg);
  j["train"]["loss"] = "dla";
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  j = to_json(cfg);
  j["data"]["user_model"]["eta"] = "steep";
  CHECK_THROWS_AS(experiment_config_from_json(j), ValidationError);
  CHECK_THROWS_AS(propensity_source_from_string("oracle"), ValidationError);

  auto none = cfg;
  none.methods.clear();
  CHECK_THROWS_AS(none.validate(), ValidationError);
  auto two_sources = cfg;
  two_sources.data.judged_path = "x.txt";
  CHECK_THROWS_AS(two_sources.validate(), ValidationError);
  auto external = cfg;
  external.data.synthetic.reset();
  external.data.train_log = "t.jsonl";
  external.data.val_log = "v.jsonl";
  external.data.test_log = "s.jsonl";
  external.data.eval_judged_path = "j.txt";
  external.propensity = PropensitySource::kGroundTruth;
  CHECK_THROWS_AS(external.validate(), ValidationError);
}

TEST_CASE("formatting and hashing helpers") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  const auto dir = scratch("atomic");
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(slurp(dir / "f.txt") == "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
}
