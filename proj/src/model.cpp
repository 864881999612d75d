#include "ultr/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "ultr/error.hpp"
#include "ultr/rng.hpp"

namespace ultr {

namespace {
const double kInitialExamLogit = std::log(0.9 / 0.1);

std::string to_string(PositionParams p) {
  switch (p) {
    case PositionParams::kNone: return "none";
    case PositionParams::kLogits: return "logits";
    case PositionParams::kPairPropensities: return "pair-propensities";
  }
  return "none";
}

PositionParams position_params_from_string(const std::string& s) {
  if (s == "none") return PositionParams::kNone;
  if (s == "logits") return PositionParams::kLogits;
  if (s == "pair-propensities") return PositionParams::kPairPropensities;
  throw ValidationError("unknown position parameter kind '" + s + "'");
}
}  // namespace

void Architecture::validate() const {
  if (input_dim == 0) throw ValidationError("input_dim must be positive");
  for (auto h : hidden_dims)
    if (h == 0) throw ValidationError("hidden dimensions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (positions != PositionParams::kNone && num_ranks == 0)
    throw ValidationError("position parameters need num_ranks > 0");
}

void ScoringModel::layout() {
  layer_offsets_.clear();
  std::size_t offset = 0;
  std::size_t in = arch_.input_dim;
  auto add_layer = [&](std::size_t out) {
    layer_offsets_.push_back(offset);
    offset += out * in + out;
    in = out;
  };
  for (auto h : arch_.hidden_dims) add_layer(h);
  add_layer(1);
  network_size_ = offset;
  std::size_t pos = 0;
  if (arch_.positions == PositionParams::kLogits) pos = arch_.num_ranks;
  if (arch_.positions == PositionParams::kPairPropensities) pos = 2 * arch_.num_ranks;
  params_.assign(network_size_ + pos, 0.0);
}

ScoringModel ScoringModel::init(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ScoringModel m;
  m.arch_ = arch;
  m.layout();
  auto rng = substream(seed, Stream::kInit);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.layer_in(l)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : m.weight(l)) w = u(rng);
  }
  if (m.has_position_logits()) std::fill(m.position_logits().begin(), m.position_logits().end(), kInitialExamLogit);
  if (m.has_pair_propensities()) {
    std::fill(m.propensity_plus().begin(), m.propensity_plus().end(), 1.0);
    std::fill(m.propensity_minus().begin(), m.propensity_minus().end(), 1.0);
  }
  return m;
}

std::size_t ScoringModel::layer_in(std::size_t l) const { return l == 0 ? arch_.input_dim : arch_.hidden_dims[l - 1]; }
std::size_t ScoringModel::layer_out(std::size_t l) const {
  return l < arch_.hidden_dims.size() ? arch_.hidden_dims[l] : 1;
}

std::span<double> ScoringModel::weight(std::size_t l) {
  return {params_.data() + layer_offsets_[l], layer_out(l) * layer_in(l)};
}
std::span<const double> ScoringModel::weight(std::size_t l) const {
  return {params_.data() + layer_offsets_[l], layer_out(l) * layer_in(l)};
}
std::span<double> ScoringModel::bias(std::size_t l) {
  return {params_.data() + layer_offsets_[l] + layer_out(l) * layer_in(l), layer_out(l)};
}
std::span<const double> ScoringModel::bias(std::size_t l) const {
  return {params_.data() + layer_offsets_[l] + layer_out(l) * layer_in(l), layer_out(l)};
}

std::span<double> ScoringModel::position_logits() {
  if (!has_position_logits()) return {};
  return {params_.data() + network_size_, arch_.num_ranks};
}
std::span<const double> ScoringModel::position_logits() const {
  if (!has_position_logits()) return {};
  return {params_.data() + network_size_, arch_.num_ranks};
}
std::span<double> ScoringModel::propensity_plus() {
  if (!has_pair_propensities()) return {};
  return {params_.data() + network_size_, arch_.num_ranks};
}
std::span<const double> ScoringModel::propensity_plus() const {
  if (!has_pair_propensities()) return {};
  return {params_.data() + network_size_, arch_.num_ranks};
}
std::span<double> ScoringModel::propensity_minus() {
  if (!has_pair_propensities()) return {};
  return {params_.data() + network_size_ + arch_.num_ranks, arch_.num_ranks};
}
std::span<const double> ScoringModel::propensity_minus() const {
  if (!has_pair_propensities()) return {};
  return {params_.data() + network_size_ + arch_.num_ranks, arch_.num_ranks};
}

nlohmann::json ScoringModel::metadata() const {
  return {{"input_dim", arch_.input_dim},
          {"hidden_dims", arch_.hidden_dims},
          {"dropout", arch_.dropout},
          {"positions", to_string(arch_.positions)},
          {"num_ranks", arch_.num_ranks},
          {"num_parameters", params_.size()}};
}

double log1p_signed(double x) {
  const double m = std::log1p(std::abs(x));
  return x < 0.0 ? -m : m;
}

std::vector<double> log1p_transform(std::span<const double> x) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), log1p_signed);
  return out;
}

ForwardPass forward_pass(const ScoringModel& model, const Matrix& features, bool train_mode, std::uint64_t seed) {
  const auto& arch = model.architecture();
  if (features.cols != arch.input_dim)
    throw ValidationError("feature dimension " + std::to_string(features.cols) + " does not match model input " +
                          std::to_string(arch.input_dim));
  ForwardPass pass;
  const std::size_t L = model.num_layers();
  pass.inputs.resize(L);
  pass.pre.resize(L - 1);
  pass.masks.resize(L - 1);

  Matrix x(features.rows, features.cols);
  std::transform(features.data.begin(), features.data.end(), x.data.begin(), log1p_signed);
  pass.inputs[0] = std::move(x);

  const bool dropout = train_mode && arch.dropout > 0.0;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    kernels::affine_forward(pass.inputs[l], model.weight(l), model.bias(l), pass.pre[l]);
    Matrix a = pass.pre[l];
    for (auto& v : a.data) v = v > 0.0 ? v : 0.0;
    if (dropout) {
      auto rng = substream(seed, Stream::kDropout, l);
      const double keep_scale = 1.0 / (1.0 - arch.dropout);
      Matrix mask(a.rows, a.cols);
      for (std::size_t i = 0; i < mask.data.size(); ++i) {
        mask.data[i] = uniform01(rng) < arch.dropout ? 0.0 : keep_scale;
        a.data[i] *= mask.data[i];
      }
      pass.masks[l] = std::move(mask);
    }
    pass.inputs[l + 1] = std::move(a);
  }
  Matrix out;
  kernels::affine_forward(pass.inputs[L - 1], model.weight(L - 1), model.bias(L - 1), out);
  pass.scores = std::move(out.data);
  return pass;
}

void backward(const ScoringModel& model, const ForwardPass& pass, std::span<const double> upstream, Gradient& out) {
  if (upstream.size() != pass.scores.size()) throw ValidationError("upstream gradient length does not match scores");
  if (out.size() != model.parameters().size()) out.assign(model.parameters().size(), 0.0);
  const std::size_t L = model.num_layers();
  const std::size_t n = upstream.size();

  Matrix g(n, 1);
  std::copy(upstream.begin(), upstream.end(), g.data.begin());
  const double* base = model.parameters().data();
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t w_off = static_cast<std::size_t>(model.weight(l).data() - base);
    const std::size_t b_off = static_cast<std::size_t>(model.bias(l).data() - base);
    kernels::affine_backward_params(pass.inputs[l], g, std::span<double>(out.data() + w_off, model.weight(l).size()),
                                    std::span<double>(out.data() + b_off, model.bias(l).size()));
    if (l == 0) break;
    Matrix d_in;
    kernels::affine_backward_input(g, model.weight(l), model.layer_in(l), d_in);
    const Matrix& pre = pass.pre[l - 1];
    const Matrix& mask = pass.masks[l - 1];
    for (std::size_t i = 0; i < d_in.data.size(); ++i) {
      double v = pre.data[i] > 0.0 ? d_in.data[i] : 0.0;
      if (!mask.data.empty()) v *= mask.data[i];
      d_in.data[i] = v;
    }
    g = std::move(d_in);
  }
}

std::vector<double> forward(const ScoringModel& model, const Matrix& features, bool train_mode, std::uint64_t seed) {
  return forward_pass(model, features, train_mode, seed).scores;
}

Gradient grad(const ScoringModel& model, const Matrix& features, std::span<const double> upstream, bool train_mode,
              std::uint64_t seed) {
  if (upstream.size() != features.rows) throw ValidationError("upstream gradient length does not match rows");
  const auto pass = forward_pass(model, features, train_mode, seed);
  Gradient g(model.parameters().size(), 0.0);
  backward(model, pass, upstream, g);
  return g;
}

void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grads,
                std::size_t decay_count) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ValidationError("optimizer state, parameters and gradients must share one shape");
  for (double g : grads)
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient at optimizer step " + std::to_string(state.step + 1));

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.lr * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i < decay_count) params[i] *= decay;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i] * grads[i];
    params[i] -= c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
  }
}

namespace {

std::string blob_path(const std::string& path) { return path + ".bin"; }

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

}  // namespace

void save_checkpoint(const std::string& path, const ScoringModel& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["format"] = "ultr-scoring-model/1";
  meta["architecture"] = model.metadata();
  meta["blob"] = std::filesystem::path(blob_path(path)).filename().string();

  // write-then-rename so readers never observe a partial checkpoint
  const std::string bin_tmp = blob_path(path) + ".tmp";
  {
    std::ofstream bin(bin_tmp, std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("cannot write '" + bin_tmp + "'");
    for (double p : model.parameters()) {
      const std::uint64_t le = to_little_endian(std::bit_cast<std::uint64_t>(p));
      bin.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  }
  const std::string js_tmp = path + ".tmp";
  {
    std::ofstream js(js_tmp, std::ios::trunc);
    if (!js) throw std::runtime_error("cannot write '" + js_tmp + "'");
    js << meta.dump(2) << '\n';
  }
  std::filesystem::rename(bin_tmp, blob_path(path));
  std::filesystem::rename(js_tmp, path);
}

ScoringModel load_checkpoint(const std::string& path, nlohmann::json* metadata) {
  std::ifstream js(path);
  if (!js) throw ValidationError("cannot open checkpoint '" + path + "'");
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid checkpoint JSON: " + std::string(e.what()));
  }
  const auto& a = meta.at("architecture");
  Architecture arch;
  arch.input_dim = a.at("input_dim").get<std::size_t>();
  arch.hidden_dims = a.at("hidden_dims").get<std::vector<std::size_t>>();
  arch.dropout = a.at("dropout").get<double>();
  arch.positions = position_params_from_string(a.at("positions").get<std::string>());
  arch.num_ranks = a.at("num_ranks").get<std::size_t>();
  ScoringModel model = ScoringModel::init(arch, 0);

  const auto dir = std::filesystem::path(path).parent_path();
  const auto bin_path = dir / meta.at("blob").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ValidationError("cannot open parameter blob '" + bin_path.string() + "'");
  for (auto& p : model.parameters()) {
    std::uint64_t le = 0;
    if (!bin.read(reinterpret_cast<char*>(&le), sizeof le)) throw ValidationError("parameter blob is truncated");
    p = std::bit_cast<double>(to_little_endian(le));
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw ValidationError("parameter blob has trailing bytes");
  if (metadata) *metadata = std::move(meta);
  return model;
}

}  // namespace ultr
