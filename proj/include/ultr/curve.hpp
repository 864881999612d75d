#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ultr {

enum class CurveMethod { kAdjacentPair, kPivotRank, kAllPairs, kRem, kTwoTower, kGroundTruth };

std::string_view to_string(CurveMethod m);
CurveMethod curve_method_from_string(std::string_view s);

/// Examination probability per displayed rank, normalized so that e(1) == 1
/// and every value lies in (0, 1].
class PropensityCurve {
 public:
  static constexpr double kMinValue = 1e-6;

  /// Takes already-normalized values; throws ValidationError otherwise.
  PropensityCurve(CurveMethod method, std::vector<double> values);

  /// Divides by the rank-1 value and clips into [kMinValue, 1].
  static PropensityCurve normalized(CurveMethod method, const std::vector<double>& raw);
  static PropensityCurve uniform(std::size_t num_ranks, CurveMethod method = CurveMethod::kGroundTruth);

  /// Value at a 1-based rank; ranks beyond the curve reuse the last value.
  double at(int rank) const;

  CurveMethod method() const { return method_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t num_ranks() const { return values_.size(); }

  nlohmann::json to_json() const;
  static PropensityCurve from_json(const nlohmann::json& j);

 private:
  CurveMethod method_;
  std::vector<double> values_;
};

PropensityCurve load_curve(const std::string& path);

}  // namespace ultr
