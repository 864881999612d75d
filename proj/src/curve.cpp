#include "ultr/curve.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ultr/error.hpp"

namespace ultr {

namespace {
constexpr std::pair<CurveMethod, std::string_view> kMethodNames[] = {
    {CurveMethod::kAdjacentPair, "adjacent-pair"}, {CurveMethod::kPivotRank, "pivot-rank"},
    {CurveMethod::kAllPairs, "all-pairs"},         {CurveMethod::kRem, "rem"},
    {CurveMethod::kTwoTower, "two-tower"},         {CurveMethod::kGroundTruth, "ground-truth"},
};
}  // namespace

std::string_view to_string(CurveMethod m) {
  for (auto [k, name] : kMethodNames)
    if (k == m) return name;
  return "unknown";
}

CurveMethod curve_method_from_string(std::string_view s) {
  for (auto [k, name] : kMethodNames)
    if (name == s) return k;
  throw ValidationError("unknown propensity method '" + std::string(s) + "'");
}

PropensityCurve::PropensityCurve(CurveMethod method, std::vector<double> values)
    : method_(method), values_(std::move(values)) {
  if (values_.empty()) throw ValidationError("propensity curve must have at least one rank");
  if (values_.front() != 1.0) throw ValidationError("propensity curve must satisfy e(1) == 1");
  for (double v : values_)
    if (!(v > 0.0 && v <= 1.0)) throw ValidationError("propensity values must lie in (0, 1]");
}

PropensityCurve PropensityCurve::normalized(CurveMethod method, const std::vector<double>& raw) {
  if (raw.empty() || !(raw.front() > 0.0) || !std::isfinite(raw.front()))
    throw EstimationError("cannot normalize a curve whose rank-1 value is not positive");
  std::vector<double> v(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double x = raw[i] / raw.front();
    v[i] = std::isfinite(x) ? std::clamp(x, kMinValue, 1.0) : kMinValue;
  }
  v.front() = 1.0;
  return PropensityCurve(method, std::move(v));
}

PropensityCurve PropensityCurve::uniform(std::size_t num_ranks, CurveMethod method) {
  return PropensityCurve(method, std::vector<double>(std::max<std::size_t>(num_ranks, 1), 1.0));
}

double PropensityCurve::at(int rank) const {
  if (rank < 1) throw ValidationError("rank must be >= 1");
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(rank), values_.size()) - 1;
  return values_[idx];
}

nlohmann::json PropensityCurve::to_json() const {
  return {{"method", std::string(to_string(method_))}, {"values", values_}};
}

PropensityCurve PropensityCurve::from_json(const nlohmann::json& j) {
  if (!j.contains("method") || !j.contains("values")) throw ValidationError("curve JSON needs 'method' and 'values'");
  return PropensityCurve(curve_method_from_string(j.at("method").get<std::string>()),
                         j.at("values").get<std::vector<double>>());
}

PropensityCurve load_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open curve '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid curve JSON in '" + path + "': " + e.what());
  }
  // the simulator's ground-truth sidecar uses {"eta", "propensities"}
  if (j.contains("propensities")) return PropensityCurve(CurveMethod::kGroundTruth, j.at("propensities").get<std::vector<double>>());
  return PropensityCurve::from_json(j);
}

}  // namespace ultr
