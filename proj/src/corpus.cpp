#include "ultr/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ultr/error.hpp"
#include "ultr/rng.hpp"

namespace ultr {

using nlohmann::json;

std::size_t JudgedDataset::num_docs() const {
  std::size_t n = 0;
  for (const auto& q : queries) n += q.docs.size();
  return n;
}

int Session::num_clicks() const {
  int n = 0;
  for (const auto& it : items) n += it.click;
  return n;
}

std::size_t ClickLog::num_items() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.items.size();
  return n;
}

std::size_t ClickLog::feature_dim() const {
  for (const auto& s : sessions)
    for (const auto& it : s.items) return it.features.size();
  return 0;
}

void ClickLog::recompute_n_ranks() {
  n_ranks = 0;
  for (const auto& s : sessions)
    for (const auto& it : s.items) n_ranks = std::max(n_ranks, it.rank);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  // from_chars for double is available in libstdc++ 11
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_long(std::string_view s, long& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string doc_id_from_comment(std::string_view comment) {
  comment = trim(comment);
  if (comment.empty()) return {};
  const auto pos = comment.find("docid");
  if (pos != std::string_view::npos) {
    auto rest = trim(comment.substr(pos + 5));
    if (!rest.empty() && rest.front() == '=') rest = trim(rest.substr(1));
    const auto toks = split_ws(rest);
    if (!toks.empty()) return std::string(toks.front());
  }
  return std::string(split_ws(comment).front());
}

struct SparseRow {
  std::vector<std::pair<long, double>> features;
  int grade;
  std::string doc_id;
};

}  // namespace

JudgedDataset parse_judged(std::istream& in) {
  std::vector<std::string> query_order;
  std::unordered_map<std::string, std::vector<SparseRow>> rows;
  long max_fid = 0;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    std::string_view comment;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) {
      comment = body.substr(hash + 1);
      body = body.substr(0, hash);
    }
    body = trim(body);
    if (body.empty()) continue;

    const auto toks = split_ws(body);
    if (toks.size() < 2) throw ParseError(line_no, "expected '<grade> qid:<id> ...'");

    long grade = 0;
    if (!parse_long(toks[0], grade)) throw ParseError(line_no, "grade is not an integer: '" + std::string(toks[0]) + "'");
    if (grade < 0 || grade > 4)
      throw ValidationError("line " + std::to_string(line_no) + ": grade " + std::to_string(grade) +
                            " outside 0..4");
    if (toks[1].substr(0, 4) != "qid:" || toks[1].size() == 4)
      throw ParseError(line_no, "second token must be qid:<id>");
    std::string qid(toks[1].substr(4));

    SparseRow row;
    row.grade = static_cast<int>(grade);
    long prev_fid = 0;
    for (std::size_t t = 2; t < toks.size(); ++t) {
      const auto colon = toks[t].find(':');
      long fid = 0;
      double val = 0.0;
      if (colon == std::string_view::npos || !parse_long(toks[t].substr(0, colon), fid) ||
          !parse_double(toks[t].substr(colon + 1), val))
        throw ParseError(line_no, "malformed feature '" + std::string(toks[t]) + "'");
      if (fid < 1) throw ParseError(line_no, "feature ids are 1-based");
      if (fid <= prev_fid) throw ParseError(line_no, "feature ids must be increasing");
      prev_fid = fid;
      max_fid = std::max(max_fid, fid);
      row.features.emplace_back(fid, val);
    }
    row.doc_id = doc_id_from_comment(comment);

    auto [it, inserted] = rows.try_emplace(qid);
    if (inserted) query_order.push_back(qid);
    if (row.doc_id.empty()) row.doc_id = qid + "-" + std::to_string(it->second.size());
    it->second.push_back(std::move(row));
  }

  JudgedDataset data;
  data.num_features = static_cast<std::size_t>(max_fid);
  data.queries.reserve(query_order.size());
  for (const auto& qid : query_order) {
    JudgedQuery q;
    q.query_id = qid;
    for (auto& r : rows[qid]) {
      JudgedDoc d;
      d.doc_id = std::move(r.doc_id);
      d.grade = r.grade;
      d.features.assign(data.num_features, 0.0);
      for (auto [fid, val] : r.features) d.features[static_cast<std::size_t>(fid - 1)] = val;
      q.docs.push_back(std::move(d));
    }
    data.queries.push_back(std::move(q));
  }
  return data;
}

namespace {

std::string format_double(double v) {
  // shortest representation that round-trips
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void write_judged(std::ostream& out, const JudgedDataset& data) {
  for (const auto& q : data.queries) {
    for (const auto& d : q.docs) {
      out << d.grade << " qid:" << q.query_id;
      for (std::size_t f = 0; f < d.features.size(); ++f)
        if (d.features[f] != 0.0) out << ' ' << (f + 1) << ':' << format_double(d.features[f]);
      out << " # docid = " << d.doc_id << '\n';
    }
  }
}

namespace {

const json& require(const json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line_no, std::string("missing required field '") + key + "'");
  return *it;
}

std::string id_string(const json& v, const char* key, std::size_t line_no) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError(line_no, std::string("field '") + key + "' must be a string");
}

}  // namespace

ClickLog parse_click_log(std::istream& in) {
  ClickLog log;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "session must be a JSON object");

    Session s;
    s.session_id = id_string(require(obj, "session_id", line_no), "session_id", line_no);
    s.query_id = id_string(require(obj, "query_id", line_no), "query_id", line_no);
    const auto& items = require(obj, "items", line_no);
    if (!items.is_array()) throw ParseError(line_no, "'items' must be an array");

    for (const auto& jt : items) {
      if (!jt.is_object()) throw ParseError(line_no, "item must be an object");
      SessionItem item;
      item.doc_id = id_string(require(jt, "doc_id", line_no), "doc_id", line_no);
      const auto& rank = require(jt, "rank", line_no);
      const auto& click = require(jt, "click", line_no);
      if (!rank.is_number_integer()) throw ParseError(line_no, "'rank' must be an integer");
      if (!click.is_number_integer() && !click.is_boolean()) throw ParseError(line_no, "'click' must be 0 or 1");
      item.rank = rank.get<int>();
      item.click = click.is_boolean() ? static_cast<int>(click.get<bool>()) : click.get<int>();
      if (item.rank < 1) throw ValidationError("line " + std::to_string(line_no) + ": rank must be >= 1");
      if (item.click != 0 && item.click != 1)
        throw ValidationError("line " + std::to_string(line_no) + ": click must be 0 or 1");
      if (auto f = jt.find("features"); f != jt.end()) {
        if (!f->is_array()) throw ParseError(line_no, "'features' must be an array");
        item.features.reserve(f->size());
        for (const auto& v : *f) {
          if (!v.is_number()) throw ParseError(line_no, "features must be numbers");
          item.features.push_back(v.get<double>());
        }
      }
      if (!have_dim) {
        dim = item.features.size();
        have_dim = true;
      } else if (item.features.size() != dim) {
        throw ValidationError("line " + std::to_string(line_no) + ": feature dimensionality " +
                              std::to_string(item.features.size()) + " differs from " + std::to_string(dim));
      }
      s.items.push_back(std::move(item));
    }

    std::stable_sort(s.items.begin(), s.items.end(),
                     [](const SessionItem& a, const SessionItem& b) { return a.rank < b.rank; });
    for (std::size_t i = 1; i < s.items.size(); ++i)
      if (s.items[i].rank == s.items[i - 1].rank)
        throw ValidationError("line " + std::to_string(line_no) + ": duplicate rank " +
                              std::to_string(s.items[i].rank));
    for (const auto& it : s.items) log.n_ranks = std::max(log.n_ranks, it.rank);
    log.sessions.push_back(std::move(s));
  }
  return log;
}

void write_click_log(std::ostream& out, const ClickLog& log) {
  for (const auto& s : log.sessions) {
    json items = json::array();
    for (const auto& it : s.items) {
      items.push_back({{"doc_id", it.doc_id}, {"rank", it.rank}, {"click", it.click}, {"features", it.features}});
    }
    json obj = {{"session_id", s.session_id}, {"query_id", s.query_id}, {"items", std::move(items)}};
    out << obj.dump() << '\n';
  }
}

JudgedDataset load_judged(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open judged dataset '" + path + "'");
  return parse_judged(in);
}

ClickLog load_click_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open click log '" + path + "'");
  return parse_click_log(in);
}

JudgedDataset filter_min_docs(const JudgedDataset& data, std::size_t min_docs) {
  if (min_docs < 1) throw ValidationError("min_docs must be >= 1");
  JudgedDataset out;
  out.num_features = data.num_features;
  for (const auto& q : data.queries)
    if (q.docs.size() >= min_docs) out.queries.push_back(q);
  return out;
}

ClickLog filter_min_docs(const ClickLog& log, std::size_t min_docs) {
  if (min_docs < 1) throw ValidationError("min_docs must be >= 1");
  ClickLog out;
  for (const auto& s : log.sessions)
    if (s.items.size() >= min_docs) out.sessions.push_back(s);
  out.recompute_n_ranks();
  return out;
}

LogSplit split_log(const ClickLog& log, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.validation > 0.0 && f.test > 0.0))
    throw ValidationError("split fractions must all be positive");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");

  const std::size_t n = log.sessions.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = substream(seed, Stream::kSplit);
  std::shuffle(order.begin(), order.end(), rng);

  auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(f.validation * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  std::vector<int> part(n, 2);
  for (std::size_t i = 0; i < n_train; ++i) part[order[i]] = 0;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) part[order[i]] = 1;

  LogSplit out;
  ClickLog* parts[3] = {&out.train, &out.validation, &out.test};
  for (std::size_t i = 0; i < n; ++i) parts[part[i]]->sessions.push_back(log.sessions[i]);
  for (auto* p : parts) p->recompute_n_ranks();
  return out;
}

}  // namespace ultr
