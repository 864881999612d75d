#include <doctest.h>

#include <set>
#include <sstream>

#include "ultr/corpus.hpp"
#include "ultr/error.hpp"

using namespace ultr;

namespace {

JudgedDataset judged(const std::string& text) {
  std::istringstream in(text);
  return parse_judged(in);
}

ClickLog clicks(const std::string& text) {
  std::istringstream in(text);
  return parse_click_log(in);
}

ClickLog log_with_sizes(std::initializer_list<int> sizes) {
  ClickLog log;
  int i = 0;
  for (int n : sizes) {
    Session s{"s" + std::to_string(i), "q" + std::to_string(i), {}};
    for (int r = 1; r <= n; ++r) s.items.push_back({"d" + std::to_string(r), r, r == 1, {}});
    log.sessions.push_back(s);
    ++i;
  }
  log.recompute_n_ranks();
  return log;
}

}  // namespace

TEST_CASE("parse_judged densifies sparse features") {
  auto d = judged("2 qid:1 1:0.5 3:1.0\n");
  REQUIRE(d.queries.size() == 1);
  REQUIRE(d.queries[0].docs.size() == 1);
  CHECK(d.queries[0].docs[0].features == std::vector<double>{0.5, 0.0, 1.0});
  CHECK(d.queries[0].docs[0].grade == 2);
  CHECK(d.num_features == 3);
}

TEST_CASE("parse_judged trivial shapes") {
  CHECK(judged("").queries.empty());
  auto d = judged("1 qid:1 1:1\n0 qid:2 1:2\n");
  REQUIRE(d.queries.size() == 2);
  CHECK(d.queries[0].docs.size() == 1);
  CHECK(d.queries[1].docs.size() == 1);
}

TEST_CASE("parse_judged pads short vectors to the widest feature id") {
  auto d = judged("1 qid:a 2:1\n0 qid:a 4:3 # docid = X7 extra\n3 qid:b 1:1 # first\n");
  REQUIRE(d.queries.size() == 2);
  CHECK(d.num_features == 4);
  CHECK(d.queries[0].docs[0].features == std::vector<double>{0, 1, 0, 0});
  CHECK(d.queries[0].docs[1].doc_id == "X7");
  CHECK(d.queries[1].docs[0].doc_id == "first");
}

TEST_CASE("parse_judged keeps first-seen query order across interleaving") {
  auto d = judged("1 qid:b 1:1\n1 qid:a 1:1\n1 qid:b 1:2\n");
  REQUIRE(d.queries.size() == 2);
  CHECK(d.queries[0].query_id == "b");
  CHECK(d.queries[0].docs.size() == 2);
}

TEST_CASE("parse_judged errors") {
  CHECK_THROWS_AS(judged("5 qid:1 1:1\n"), ValidationError);
  CHECK_THROWS_AS(judged("-1 qid:1 1:1\n"), ValidationError);
  try {
    judged("1 qid:1 1:1\n1 qid:1 1:x\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(judged("1 1:1\n"), ParseError);
  CHECK_THROWS_AS(judged("1 qid:1 2:1 1:1\n"), ParseError);
  CHECK_THROWS_AS(judged("1 qid:1 0:1\n"), ParseError);
}

TEST_CASE("judged round trip") {
  const std::string text = "2 qid:1 1:0.5 3:1 # docid = a\n0 qid:1 2:-0.25 # docid = b\n4 qid:7 1:3 # docid = c\n";
  auto d = judged(text);
  std::ostringstream out;
  write_judged(out, d);
  auto again = judged(out.str());
  REQUIRE(again.queries.size() == d.queries.size());
  for (std::size_t q = 0; q < d.queries.size(); ++q)
    for (std::size_t i = 0; i < d.queries[q].docs.size(); ++i) {
      CHECK(again.queries[q].docs[i].doc_id == d.queries[q].docs[i].doc_id);
      CHECK(again.queries[q].docs[i].grade == d.queries[q].docs[i].grade);
      CHECK(again.queries[q].docs[i].features == d.queries[q].docs[i].features);
    }
  std::ostringstream out2;
  write_judged(out2, again);
  CHECK(out2.str() == out.str());
}

TEST_CASE("parse_click_log examples") {
  auto log = clicks(
      R"({"session_id":"s","query_id":"q","items":[{"doc_id":"a","rank":1,"click":1},{"doc_id":"b","rank":2,"click":0},{"doc_id":"c","rank":3,"click":0}]})");
  REQUIRE(log.sessions.size() == 1);
  CHECK(log.n_ranks == 3);
  CHECK(log.sessions[0].num_clicks() == 1);

  try {
    clicks(
        R"({"session_id":"s","query_id":"q","items":[{"doc_id":"a","rank":1,"click":0},{"doc_id":"b","rank":1,"click":0},{"doc_id":"c","rank":2,"click":0}]})");
    FAIL("expected duplicate rank");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("duplicate rank") != std::string::npos);
  }

  auto two = clicks(R"({"session_id":"x","query_id":"q","items":[]})"
                    "\n"
                    R"({"session_id":"y","query_id":"q","items":[]})");
  REQUIRE(two.sessions.size() == 2);
  CHECK(two.sessions[0].session_id == "x");
  CHECK(two.sessions[1].session_id == "y");
}

TEST_CASE("parse_click_log field handling") {
  CHECK_THROWS_AS(clicks(R"({"session_id":"s","items":[]})"), ParseError);
  CHECK_THROWS_AS(clicks(R"({"session_id":"s","query_id":"q","items":[{"doc_id":"a","click":0}]})"), ParseError);
  CHECK_THROWS_AS(clicks("not json"), ParseError);
  CHECK_THROWS_AS(clicks(R"({"session_id":"s","query_id":"q","items":[{"doc_id":"a","rank":1,"click":2}]})"),
                  ValidationError);
  // unknown fields ignored; items ordered by rank; gaps kept
  auto log = clicks(
      R"({"extra":1,"query_id":"q","session_id":"s","items":[{"doc_id":"b","rank":5,"click":0,"dwell":3},{"doc_id":"a","rank":2,"click":1}]})");
  REQUIRE(log.sessions[0].items.size() == 2);
  CHECK(log.sessions[0].items[0].rank == 2);
  CHECK(log.sessions[0].items[1].rank == 5);
  CHECK(log.n_ranks == 5);
}

TEST_CASE("click log round trip keeps zero-click sessions") {
  const std::string text =
      R"({"session_id":"s1","query_id":"q","items":[{"doc_id":"a","rank":1,"click":0,"features":[0.5,-1]},{"doc_id":"b","rank":3,"click":1,"features":[2,0]}]})"
      "\n"
      R"({"session_id":"s2","query_id":"q","items":[{"doc_id":"a","rank":1,"click":0,"features":[0.5,-1]}]})"
      "\n";
  auto log = clicks(text);
  CHECK(log.sessions.size() == 2);
  CHECK(log.sessions[1].num_clicks() == 0);
  std::ostringstream out;
  write_click_log(out, log);
  auto again = clicks(out.str());
  std::ostringstream out2;
  write_click_log(out2, again);
  CHECK(out.str() == out2.str());
  CHECK(again.feature_dim() == 2);
  CHECK(again.sessions[0].items[1].features == std::vector<double>{2, 0});
}

TEST_CASE("filter_min_docs") {
  auto f = filter_min_docs(log_with_sizes({4, 5, 8}), 5);
  REQUIRE(f.sessions.size() == 2);
  CHECK(f.sessions[0].items.size() == 5);
  CHECK(f.sessions[1].items.size() == 8);

  auto all = log_with_sizes({1, 3, 2});
  CHECK(filter_min_docs(all, 1).sessions.size() == 3);
  CHECK(filter_min_docs(log_with_sizes({3, 3}), 5).sessions.empty());
  CHECK_THROWS_AS(filter_min_docs(all, 0), ValidationError);

  auto once = filter_min_docs(log_with_sizes({2, 6, 5, 1, 9}), 5);
  auto twice = filter_min_docs(once, 5);
  REQUIRE(once.sessions.size() == twice.sessions.size());
  for (std::size_t i = 0; i < once.sessions.size(); ++i)
    CHECK(once.sessions[i].session_id == twice.sessions[i].session_id);

  auto d = judged("1 qid:a 1:1\n1 qid:b 1:1\n1 qid:b 1:1\n");
  auto fd = filter_min_docs(d, 2);
  REQUIRE(fd.queries.size() == 1);
  CHECK(fd.queries[0].query_id == "b");
}

TEST_CASE("split_log partitions deterministically") {
  auto log = log_with_sizes({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  auto a = split_log(log, {0.8, 0.1, 0.1}, 7);
  CHECK(a.train.sessions.size() == 8);
  CHECK(a.validation.sessions.size() == 1);
  CHECK(a.test.sessions.size() == 1);

  std::multiset<std::string> ids;
  for (const auto* part : {&a.train, &a.validation, &a.test})
    for (const auto& s : part->sessions) ids.insert(s.session_id);
  CHECK(ids.size() == 10);
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 10);

  auto b = split_log(log, {0.8, 0.1, 0.1}, 7);
  auto id_list = [](const ClickLog& l) {
    std::vector<std::string> v;
    for (const auto& s : l.sessions) v.push_back(s.session_id);
    return v;
  };
  CHECK(id_list(a.train) == id_list(b.train));
  CHECK(id_list(a.test) == id_list(b.test));

  CHECK_THROWS_AS(split_log(log, {1.0, 0.0, 0.0}, 7), ValidationError);
  CHECK_THROWS_AS(split_log(log, {0.5, 0.3, 0.3}, 7), ValidationError);
}
