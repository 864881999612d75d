#include "ultr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "ultr/error.hpp"
#include "ultr/rng.hpp"

namespace ultr {

namespace {
constexpr double kMinImprovement = 1e-7;
constexpr std::size_t kEvalChunk = 4096;  // sessions scored per forward pass
}  // namespace

void TrainConfig::validate() const {
  loss.validate();
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (patience < 1 || patience >= max_epochs) throw ValidationError("patience must satisfy 1 <= patience < max_epochs");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j = {{"loss", std::string(to_string(cfg.loss.kind))},
                      {"tau", cfg.loss.tau},
                      {"l1_weight", cfg.loss.l1_weight},
                      {"hidden_dims", cfg.hidden_dims},
                      {"lr", cfg.lr},
                      {"weight_decay", cfg.weight_decay},
                      {"dropout", cfg.dropout},
                      {"max_epochs", cfg.max_epochs},
                      {"patience", cfg.patience},
                      {"batch_size", cfg.batch_size},
                      {"seed", cfg.seed},
                      {"num_ranks", cfg.num_ranks}};
  if (cfg.loss.curve) j["curve"] = cfg.loss.curve->to_json();
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  TrainConfig cfg;
  try {
    if (j.contains("loss")) cfg.loss.kind = loss_kind_from_string(j.at("loss").get<std::string>());
    cfg.loss.tau = j.value("tau", cfg.loss.tau);
    cfg.loss.l1_weight = j.value("l1_weight", cfg.loss.l1_weight);
    if (j.contains("curve")) cfg.loss.curve = PropensityCurve::from_json(j.at("curve"));
    if (j.contains("curve_path")) cfg.loss.curve = load_curve(j.at("curve_path").get<std::string>());
    cfg.hidden_dims = j.value("hidden_dims", cfg.hidden_dims);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.num_ranks = j.value("num_ranks", cfg.num_ranks);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid train config: ") + e.what());
  }
  return cfg;
}

PackedLog pack(const ClickLog& log) {
  PackedLog p;
  const std::size_t d = log.feature_dim();
  p.features = Matrix(log.num_items(), d);
  p.offsets.reserve(log.sessions.size() + 1);
  p.offsets.push_back(0);
  p.ranks.reserve(log.num_items());
  p.clicks.reserve(log.num_items());
  std::size_t row = 0;
  for (const auto& s : log.sessions) {
    for (const auto& it : s.items) {
      if (it.features.size() != d) throw ValidationError("inconsistent feature dimensionality in click log");
      std::copy(it.features.begin(), it.features.end(), p.features.row(row).begin());
      p.ranks.push_back(it.rank);
      p.clicks.push_back(it.click);
      ++row;
    }
    p.offsets.push_back(row);
  }
  p.n_ranks = log.n_ranks;
  return p;
}

Architecture architecture_for(LossKind kind, std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                              double dropout, std::size_t num_ranks) {
  Architecture a;
  a.input_dim = input_dim;
  a.hidden_dims = hidden_dims;
  a.dropout = dropout;
  if (uses_position_logits(kind)) a.positions = PositionParams::kLogits;
  if (uses_pair_propensities(kind)) a.positions = PositionParams::kPairPropensities;
  a.num_ranks = a.positions == PositionParams::kNone ? 0 : num_ranks;
  return a;
}

LossResult session_loss(const LossSpec& spec, const ScoringModel& model, std::span<const double> scores,
                        std::span<const int> clicks, std::span<const int> ranks) {
  std::vector<double> exam;
  if (uses_position_logits(spec.kind)) {
    const auto logits = model.position_logits();
    if (logits.empty()) throw ValidationError(std::string(to_string(spec.kind)) + " needs per-rank examination logits");
    exam.reserve(ranks.size());
    for (int r : ranks) {
      if (r < 1 || static_cast<std::size_t>(r) > logits.size())
        throw ValidationError("rank " + std::to_string(r) + " exceeds the model's " + std::to_string(logits.size()) +
                              " examination parameters");
      exam.push_back(logits[static_cast<std::size_t>(r - 1)]);
    }
  }
  switch (spec.kind) {
    case LossKind::kNaivePointwise: return naive_pointwise(scores, clicks);
    case LossKind::kNaiveListwise: return naive_listwise(scores, clicks);
    case LossKind::kNaiveLambdaRank: return naive_lambdarank(scores, clicks);
    case LossKind::kTwoTower: return two_tower(scores, exam, clicks);
    case LossKind::kRegressionEm: return regression_em(scores, exam, clicks);
    case LossKind::kIpsPointwise: return ips_pointwise(scores, clicks, ranks, *spec.curve, spec.tau);
    case LossKind::kIpsListwise: return ips_listwise(scores, clicks, ranks, *spec.curve, spec.tau);
    case LossKind::kDla: return dla(scores, exam, clicks);
    case LossKind::kPairDebias:
      return pair_debias(scores, clicks, ranks, model.propensity_plus(), model.propensity_minus(), spec.l1_weight);
  }
  throw ValidationError("unhandled loss kind");
}

namespace {

struct Gathered {
  Matrix features;
  std::vector<std::size_t> offsets;  // into the gathered rows
};

Gathered gather(const PackedLog& log, std::span<const std::size_t> sessions) {
  Gathered g;
  std::size_t rows = 0;
  for (auto s : sessions) rows += log.offsets[s + 1] - log.offsets[s];
  g.features = Matrix(rows, log.features.cols);
  g.offsets.reserve(sessions.size() + 1);
  g.offsets.push_back(0);
  std::size_t at = 0;
  for (auto s : sessions) {
    const std::size_t begin = log.offsets[s], end = log.offsets[s + 1];
    std::copy(log.features.data.begin() + static_cast<std::ptrdiff_t>(begin * log.features.cols),
              log.features.data.begin() + static_cast<std::ptrdiff_t>(end * log.features.cols),
              g.features.data.begin() + static_cast<std::ptrdiff_t>(at * log.features.cols));
    at += end - begin;
    g.offsets.push_back(at);
  }
  return g;
}

std::vector<LossResult> session_losses(const ScoringModel& model, const PackedLog& log,
                                       std::span<const std::size_t> sessions, const Gathered& g,
                                       std::span<const double> scores, const LossSpec& spec) {
  std::vector<LossResult> out(sessions.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(sessions.size()); ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const std::size_t s = sessions[bi];
    const std::size_t begin = log.offsets[s], n = log.offsets[s + 1] - begin;
    out[bi] = session_loss(spec, model, scores.subspan(g.offsets[bi], n),
                           std::span<const int>(log.clicks).subspan(begin, n),
                           std::span<const int>(log.ranks).subspan(begin, n));
  }
  return out;
}

}  // namespace

BatchGradient batch_gradient(const ScoringModel& model, const PackedLog& log, std::span<const std::size_t> sessions,
                             const LossSpec& spec, bool train_mode, std::uint64_t dropout_seed) {
  const auto g = gather(log, sessions);
  const auto pass = forward_pass(model, g.features, train_mode, dropout_seed);
  const auto results = session_losses(model, log, sessions, g, pass.scores, spec);

  BatchGradient out;
  out.grad.assign(model.parameters().size(), 0.0);
  std::vector<double> upstream(pass.scores.size(), 0.0);
  const std::size_t pos = model.position_offset();
  const std::size_t K = model.architecture().num_ranks;
  for (std::size_t b = 0; b < sessions.size(); ++b) {
    const auto& r = results[b];
    out.loss_sum += r.loss;
    std::copy(r.d_scores.begin(), r.d_scores.end(), upstream.begin() + static_cast<std::ptrdiff_t>(g.offsets[b]));
    const std::size_t begin = log.offsets[sessions[b]];
    for (std::size_t i = 0; i < r.d_exam.size(); ++i)
      out.grad[pos + static_cast<std::size_t>(log.ranks[begin + i] - 1)] += r.d_exam[i];
    for (std::size_t q = 0; q < r.d_plus.size(); ++q) {
      out.grad[pos + q] += r.d_plus[q];
      out.grad[pos + K + q] += r.d_minus[q];
    }
  }
  backward(model, pass, upstream, out.grad);
  return out;
}

double mean_session_loss(const ScoringModel& model, const PackedLog& log, const LossSpec& spec) {
  const std::size_t n = log.num_sessions();
  if (n == 0) throw ValidationError("cannot compute a loss over an empty log");
  double total = 0.0;
  std::vector<std::size_t> chunk;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    chunk.resize(std::min(kEvalChunk, n - start));
    std::iota(chunk.begin(), chunk.end(), start);
    const auto g = gather(log, chunk);
    const auto scores = forward(model, g.features, false, 0);
    const auto results = session_losses(model, log, chunk, g, scores, spec);
    for (const auto& r : results) total += r.loss;
  }
  return total / static_cast<double>(n);
}

namespace {

void renormalize_pair_propensities(ScoringModel& model) {
  for (auto span : {model.propensity_plus(), model.propensity_minus()}) {
    for (auto& v : span) v = std::max(v, PropensityCurve::kMinValue);
    const double first = span.front();
    for (auto& v : span) v /= first;
  }
}

}  // namespace

TrainedModel train(const ClickLog& train_log, const ClickLog& val_log, const TrainConfig& cfg) {
  cfg.validate();
  if (train_log.sessions.empty() || val_log.sessions.empty())
    throw ValidationError("training and validation logs must be non-empty");
  const std::size_t dim = train_log.feature_dim();
  if (dim == 0) throw ValidationError("click log carries no features");
  if (val_log.feature_dim() != dim) throw ValidationError("train and validation feature dimensionality differ");

  const PackedLog train_packed = pack(train_log);
  const PackedLog val_packed = pack(val_log);
  const std::size_t K =
      cfg.num_ranks ? cfg.num_ranks : static_cast<std::size_t>(std::max(train_log.n_ranks, val_log.n_ranks));

  ScoringModel model = ScoringModel::init(architecture_for(cfg.loss.kind, dim, cfg.hidden_dims, cfg.dropout, K), cfg.seed);
  OptimizerState opt(AdamWConfig{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8}, model.parameters().size());

  TrainedModel out;
  out.model = model;
  out.best_val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(train_packed.num_sessions());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    opt.config.lr = cfg.lr_hook ? cfg.lr_hook(epoch, cfg.lr) : cfg.lr;
    auto rng = substream(cfg.seed, Stream::kShuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::uint64_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      const std::uint64_t dropout_seed = splitmix64(cfg.seed ^ splitmix64((static_cast<std::uint64_t>(epoch) << 32) | step));
      auto bg = batch_gradient(model, train_packed, batch, cfg.loss, true, dropout_seed);
      if (!std::isfinite(bg.loss_sum))
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1));
      epoch_loss += bg.loss_sum;
      try {
        adamw_step(opt, model.parameters(), bg.grad, model.num_network_parameters());
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1) + ")");
      }
      if (model.has_pair_propensities()) renormalize_pair_propensities(model);
    }

    const double val = mean_session_loss(model, val_packed, cfg.loss);
    if (!std::isfinite(val)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    out.history.push_back({epoch, epoch_loss / static_cast<double>(order.size()), val});
    out.stopped_epoch = epoch;

    if (val < out.best_val_loss - kMinImprovement) {
      out.best_val_loss = val;
      out.best_epoch = epoch;
      out.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return out;
}

std::vector<SweepRow> sweep(const std::vector<TrainConfig>& grid, const ClickLog& train_log, const ClickLog& val_log,
                            const std::vector<std::uint64_t>& seeds) {
  if (grid.empty()) throw ValidationError("sweep grid must not be empty");
  if (seeds.empty()) throw ValidationError("sweep needs at least one seed");
  std::vector<SweepRow> rows(grid.size() * seeds.size());
  // Runs are independent; nested parallel regions inside train() fall back to one thread.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows.size()); ++r) {
    const auto ri = static_cast<std::size_t>(r);
    auto& row = rows[ri];
    row.config_index = ri / seeds.size();
    row.seed = seeds[ri % seeds.size()];
    TrainConfig cfg = grid[row.config_index];
    cfg.seed = row.seed;
    try {
      const auto result = train(train_log, val_log, cfg);
      row.best_val_loss = result.best_val_loss;
      row.stopped_epoch = result.stopped_epoch;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      row.best_val_loss = std::numeric_limits<double>::infinity();
    }
  }

  std::vector<double> mean(grid.size(), 0.0);
  for (const auto& row : rows) mean[row.config_index] += row.best_val_loss / static_cast<double>(seeds.size());
  std::stable_sort(rows.begin(), rows.end(), [&](const SweepRow& a, const SweepRow& b) {
    return mean[a.config_index] < mean[b.config_index];
  });
  return rows;
}

}  // namespace ultr
