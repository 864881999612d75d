#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ultr/corpus.hpp"
#include "ultr/curve.hpp"
#include "ultr/model.hpp"

namespace ultr {

/// Clicks / impressions per rank (index rank - 1); nullopt where a rank was never shown.
std::vector<std::optional<double>> ctr_by_rank(const ClickLog& log);

struct RankStats {
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;

  double ctr() const { return impressions ? static_cast<double>(clicks) / static_cast<double>(impressions) : 0.0; }
  friend bool operator==(const RankStats&, const RankStats&) = default;
};

/// One (query, doc) pair observed at both ranks of a rank pair.
struct PairEntry {
  std::uint32_t query_doc = 0;
  RankStats lo;  // at the smaller rank
  RankStats hi;  // at the larger rank
  friend bool operator==(const PairEntry&, const PairEntry&) = default;
};

struct PairCell {
  std::vector<PairEntry> entries;  // sorted by query_doc
  RankStats lo_total;
  RankStats hi_total;
  friend bool operator==(const PairCell&, const PairCell&) = default;
};

/// For every rank pair (a < b): the (query, doc) pairs shown at both ranks with
/// their impression and click counts at each.
class InterventionIndex {
 public:
  InterventionIndex() = default;
  explicit InterventionIndex(int num_ranks);

  int num_ranks() const { return num_ranks_; }
  const PairCell& cell(int a, int b) const;
  PairCell& cell(int a, int b);

  /// "query_id \x1f doc_id" keys, indexed by PairEntry::query_doc.
  std::vector<std::string> query_docs;

  friend bool operator==(const InterventionIndex&, const InterventionIndex&) = default;

 private:
  int num_ranks_ = 0;
  std::vector<PairCell> cells_;  // num_ranks x num_ranks, upper triangle used
};

/// Parallel over (query, doc) pairs; identical output to the serial version.
InterventionIndex build_intervention_index(const ClickLog& log);
InterventionIndex build_intervention_index_serial(const ClickLog& log);

/// How a rank pair's interventional CTRs are formed.
///  - kPooled:  clicks and impressions summed over all (q,d) before dividing.
///  - kMatched: per-(q,d) CTRs averaged with the weight min(imp_a, imp_b) shared
///              by both ranks, so both sides average over the same documents.
enum class PairPooling { kPooled, kMatched };

struct PairCtr {
  double lo = 0.0;
  double hi = 0.0;
  double weight = 0.0;  // min(pooled impressions at a, at b)
};
PairCtr pair_ctr(const PairCell& cell, PairPooling pooling);

struct HarvestOptions {
  PairPooling pooling = PairPooling::kMatched;
};

PropensityCurve adjacent_pair(const InterventionIndex& idx, int num_ranks, const HarvestOptions& opts = {});
PropensityCurve pivot_rank(const InterventionIndex& idx, int num_ranks, int pivot = 1, const HarvestOptions& opts = {});

struct AllPairsOptions {
  PairPooling pooling = PairPooling::kMatched;
  double tolerance = 1e-8;  // on the projected-gradient norm
  int max_iterations = 10000;
};

/// Pairwise interventional CTRs, already reduced to one (lo, hi, weight) per rank pair.
struct PairObservations {
  int num_ranks = 0;
  std::vector<double> lo, hi, weight;  // num_ranks x num_ranks, entry (a-1, b-1) for a < b

  explicit PairObservations(int k = 0)
      : num_ranks(k), lo(static_cast<std::size_t>(k * k)), hi(lo.size()), weight(lo.size()) {}
  std::size_t at(int a, int b) const { return static_cast<std::size_t>((a - 1) * num_ranks + (b - 1)); }
};
PairObservations observe_pairs(const InterventionIndex& idx, int num_ranks, PairPooling pooling);

struct AllPairsResult {
  std::vector<double> values;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Minimizes sum_{a<b} w_ab (c_a e_b - c_b e_a)^2 with e_1 = 1 and e in [1e-6, 1]
/// by accelerated projected gradient descent.
AllPairsResult solve_all_pairs(const PairObservations& obs, const AllPairsOptions& opts = {});
PropensityCurve all_pairs(const InterventionIndex& idx, int num_ranks, const AllPairsOptions& opts = {});

/// sigmoid(logit_k) / sigmoid(logit_1) from a model with per-rank examination logits.
PropensityCurve extract_model_propensities(const ScoringModel& model, CurveMethod method = CurveMethod::kRem);

}  // namespace ultr
