#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ultr {

struct JudgedDoc {
  std::string doc_id;
  std::vector<double> features;
  int grade = 0;  // 0..4
};

struct JudgedQuery {
  std::string query_id;
  std::vector<JudgedDoc> docs;
};

/// Queries with graded candidates. Every feature vector has `num_features` entries.
struct JudgedDataset {
  std::vector<JudgedQuery> queries;
  std::size_t num_features = 0;

  std::size_t num_docs() const;
};

struct SessionItem {
  std::string doc_id;
  int rank = 1;  // displayed rank, 1-based; gaps allowed
  int click = 0;
  std::vector<double> features;
};

/// One logged result page. Items are ordered by strictly increasing rank.
struct Session {
  std::string session_id;
  std::string query_id;
  std::vector<SessionItem> items;

  int num_clicks() const;
};

struct ClickLog {
  std::vector<Session> sessions;
  int n_ranks = 0;  // maximum rank present

  std::size_t num_items() const;
  /// Shared feature dimensionality (0 when the log carries no features).
  std::size_t feature_dim() const;
  void recompute_n_ranks();
};

// --- LETOR / SVMLight with qid ---------------------------------------------

/// Reads `<grade> qid:<id> <fid>:<val> ... [# comment]` lines. Feature ids are
/// 1-based and may be sparse; absent ids densify to 0.0 and the dimensionality
/// is the largest id in the stream. A `docid = X` (or first token) in the
/// trailing comment becomes the document id.
JudgedDataset parse_judged(std::istream& in);
void write_judged(std::ostream& out, const JudgedDataset& data);

// --- Click log, JSON Lines -------------------------------------------------

ClickLog parse_click_log(std::istream& in);
void write_click_log(std::ostream& out, const ClickLog& log);

JudgedDataset load_judged(const std::string& path);
ClickLog load_click_log(const std::string& path);

// --- Preprocessing ---------------------------------------------------------

JudgedDataset filter_min_docs(const JudgedDataset& data, std::size_t min_docs = 5);
ClickLog filter_min_docs(const ClickLog& log, std::size_t min_docs = 5);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct LogSplit {
  ClickLog train;
  ClickLog validation;
  ClickLog test;
};

/// Session-level random partition. Each part keeps the input's session order.
LogSplit split_log(const ClickLog& log, const SplitFractions& fractions, std::uint64_t seed);

}  // namespace ultr
