// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gswm/errors.hpp"

namespace gswm {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kCosineOffset = 0.008;
constexpr double kBetaCap = 0.999;
}  // namespace

NoiseSchedule::NoiseSchedule(int k_train) {
  if (k_train < 1) throw ConfigError("NoiseSchedule: k_train must be >= 1");
  auto sq_cos = [&](int k) {
    double t = (static_cast<double>(k) / k_train + kCosineOffset) / (1.0 + kCosineOffset);
    double c = std::cos(t * kPi / 2.0);
    return c * c;
  };
  alpha_bar_.assign(static_cast<size_t>(k_train) + 1, 0.0);
  alpha_bar_[0] = 1.0;
  const double f0 = sq_cos(0);
  double prev = 1.0;
  for (int k = 1; k <= k_train; ++k) {
    double beta = 1.0 - sq_cos(k) / f0 / prev;
    beta = std::min(beta, kBetaCap);
    prev *= 1.0 - beta;
    alpha_bar_[static_cast<size_t>(k)] = prev;
  }
}

double NoiseSchedule::alpha_bar(int k) const {
  if (k < 0 || k > k_train()) throw ContractError("NoiseSchedule: step out of range");
  return alpha_bar_[static_cast<size_t>(k)];
}

double NoiseSchedule::sqrt_alpha_bar(int k) const { return std::sqrt(alpha_bar(k)); }

double NoiseSchedule::sqrt_one_minus(int k) const { return std::sqrt(1.0 - alpha_bar(k)); }

NoiseSchedule::StepCoeffs NoiseSchedule::ddim_coeffs(int k, int k_prev, double eta) const {
  if (k_prev < 0 || k_prev >= k || k > k_train())
    throw ContractError("NoiseSchedule: ddim_coeffs needs 0 <= k_prev < k <= k_train");
  if (eta < 0.0) throw ContractError("NoiseSchedule: eta must be >= 0");
  const double ab_k = alpha_bar(k);
  const double ab_p = alpha_bar(k_prev);
  StepCoeffs c;
  c.sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_k)) * std::sqrt(1.0 - ab_k / ab_p);
  c.alpha = std::sqrt(ab_p / ab_k);
  double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - c.sigma * c.sigma));
  c.gamma = std::sqrt(1.0 - ab_k) - dir / c.alpha;
  return c;
}

std::vector<int> NoiseSchedule::inference_steps(int k_infer) const {
  if (k_infer < 1 || k_infer > k_train())
    throw ConfigError("NoiseSchedule: k_infer must lie in [1, k_train]");
  std::vector<int> steps(static_cast<size_t>(k_infer));
  for (int i = 1; i <= k_infer; ++i) {
    double t = static_cast<double>(i) * k_train() / k_infer;
    steps[static_cast<size_t>(k_infer - i)] = static_cast<int>(std::llround(t));
  }
  return steps;
}

Normalizer::Normalizer(std::vector<double> lo, std::vector<double> hi)
    : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size()) throw DimensionError("Normalizer: lo/hi size mismatch");
  for (size_t d = 0; d < lo_.size(); ++d)
    if (!(lo_[d] <= hi_[d])) throw ContractError("Normalizer: requires lo <= hi per dimension");
}

double Normalizer::normalize(double v, int d) const {
  const auto i = static_cast<size_t>(d);
  const double span = hi_[i] - lo_[i];
  if (span == 0.0) return 0.0;
  return 2.0 * (v - lo_[i]) / span - 1.0;
}

double Normalizer::denormalize(double u, int d) const {
  const auto i = static_cast<size_t>(d);
  const double span = hi_[i] - lo_[i];
  if (span == 0.0) return lo_[i];
  return lo_[i] + (u + 1.0) * 0.5 * span;
}

std::vector<float> Normalizer::normalize_row(std::span<const float> v) const {
  if (v.size() != lo_.size()) throw DimensionError("Normalizer: row width mismatch");
  std::vector<float> out(v.size());
  for (size_t d = 0; d < v.size(); ++d)
    out[d] = static_cast<float>(normalize(v[d], static_cast<int>(d)));
  return out;
}

std::vector<float> Normalizer::denormalize_row(std::span<const float> v) const {
  if (v.size() != lo_.size()) throw DimensionError("Normalizer: row width mismatch");
  std::vector<float> out(v.size());
  for (size_t d = 0; d < v.size(); ++d)
    out[d] = static_cast<float>(denormalize(v[d], static_cast<int>(d)));
  return out;
}

Normalizer fit_normalizer(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) throw ContractError("fit_normalizer: empty dataset");
  const size_t dims = rows[0].size();
  std::vector<double> lo(dims, std::numeric_limits<double>::infinity());
  std::vector<double> hi(dims, -std::numeric_limits<double>::infinity());
  for (const auto& row : rows) {
    if (row.size() != dims) throw DimensionError("fit_normalizer: ragged rows");
    for (size_t d = 0; d < dims; ++d) {
      lo[d] = std::min(lo[d], static_cast<double>(row[d]));
      hi[d] = std::max(hi[d], static_cast<double>(row[d]));
    }
  }
  return Normalizer(std::move(lo), std::move(hi));
}

Tensor execute_window(const Tensor& chunk, const ChunkSpec& spec) {
  if (spec.n_act < 1 || spec.n_act > spec.horizon)
    throw ConfigError("execute_window: n_act must lie in [1, horizon]");
  if (chunk.ndim() != 2 || chunk.dim(0) != spec.horizon)
    throw DimensionError("execute_window: chunk must be [horizon, action_dim]");
  const int a = chunk.dim(1);
  const int first = spec.horizon - spec.n_act;
  auto v = chunk.data();
  std::vector<float> out(static_cast<size_t>(spec.n_act) * a);
  std::copy_n(v.begin() + static_cast<size_t>(first) * a, out.size(), out.begin());
  return Tensor::of({spec.n_act, a}, std::move(out));
}

const char* mode_name(PredictionMode m) {
  return m == PredictionMode::kSample ? "sample" : "epsilon";
}

PredictionMode mode_from_name(const std::string& name) {
  if (name == "sample") return PredictionMode::kSample;
  if (name == "epsilon") return PredictionMode::kEpsilon;
  throw ConfigError("unknown prediction mode: " + name);
}

Tensor sinusoidal_features(int k, int dim) {
  if (dim < 4 || dim % 2 != 0) throw ConfigError("sinusoidal_features: dim must be even, >= 4");
  const int half = dim / 2;
  std::vector<float> v(static_cast<size_t>(dim));
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / (half - 1));
    v[static_cast<size_t>(i)] = static_cast<float>(std::sin(k * freq));
    v[static_cast<size_t>(half + i)] = static_cast<float>(std::cos(k * freq));
  }
  return Tensor::of({1, dim}, std::move(v));
}

ConditionalDenoiser::ConditionalDenoiser(Registry& reg, const std::string& prefix,
                                         const DenoiserConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      in_proj_(reg, prefix + ".in",
               cfg.action_dim + cfg.cond_dim + cfg.state_dim, cfg.width, rng),
      head_(reg, prefix + ".head", cfg.width, cfg.action_dim, rng) {
  if (cfg.horizon < 1 || cfg.action_dim < 1 || cfg.cond_dim < 1 || cfg.state_dim < 1 ||
      cfg.width < 1 || cfg.blocks < 1)
    throw ConfigError("ConditionalDenoiser: all dimensions must be >= 1");
  if (cfg.step_embed_dim < 4 || cfg.step_embed_dim % 2 != 0)
    throw ConfigError("ConditionalDenoiser: step_embed_dim must be even, >= 4");
  blocks_.reserve(static_cast<size_t>(cfg.blocks));
  for (int i = 0; i < cfg.blocks; ++i) {
    const std::string b = prefix + ".block" + std::to_string(i);
    blocks_.push_back(Block{DenseLayer(reg, b + ".emb", cfg.step_embed_dim, cfg.width, rng),
                            Conv1dLayer(reg, b + ".c0", cfg.width, cfg.width, rng),
                            Conv1dLayer(reg, b + ".c1", cfg.width, cfg.width, rng)});
  }
}

Tensor ConditionalDenoiser::forward(const Tensor& chunk, int k, const Tensor& cond,
                                    const Tensor& state) const {
  if (chunk.ndim() != 2 || chunk.dim(0) != cfg_.horizon || chunk.dim(1) != cfg_.action_dim)
    throw DimensionError("ConditionalDenoiser: chunk must be [horizon, action_dim]");
  if (cond.ndim() != 2 || cond.dim(0) != 1 || cond.dim(1) != cfg_.cond_dim)
    throw DimensionError("ConditionalDenoiser: cond must be [1, cond_dim]");
  if (state.ndim() != 2 || state.dim(0) != 1 || state.dim(1) != cfg_.state_dim)
    throw DimensionError("ConditionalDenoiser: state must be [1, state_dim]");
  Tensor per_step = broadcast_rows(concat_cols({cond, state}), cfg_.horizon);
  Tensor x = concat_cols({chunk, per_step});
  Tensor h = transpose2d(in_proj_.forward(x, Act::kRelu));
  Tensor se = sinusoidal_features(k, cfg_.step_embed_dim);
  for (const auto& b : blocks_) {
    Tensor e = tile_cols(transpose2d(b.emb.forward(se)), cfg_.horizon);
    Tensor t = activate(add(h, e), Act::kRelu);
    t = activate(b.c0.forward(t), Act::kRelu);
    t = b.c1.forward(t);
    h = add(h, t);
  }
  return head_.forward(transpose2d(h));
}

DiffusionPolicy::DiffusionPolicy(Registry& reg, const std::string& prefix,
                                 const DiffusionConfig& cfg, RngStream& rng)
    : cfg_(cfg), sched_(cfg.k_train), den_(reg, prefix, cfg.denoiser, rng) {
  if (cfg.k_infer < 1 || cfg.k_infer > cfg.k_train)
    throw ConfigError("DiffusionPolicy: k_infer must lie in [1, k_train]");
  if (cfg.eta < 0.0) throw ConfigError("DiffusionPolicy: eta must be >= 0");
}

Tensor DiffusionPolicy::add_noise(const Tensor& a0, int k, const Tensor& eps) const {
  if (a0.ndim() != 2 || eps.ndim() != 2 || a0.shape() != eps.shape())
    throw DimensionError("add_noise: a0 and eps must share a 2-d shape");
  if (k < 0 || k > cfg_.k_train) throw ContractError("add_noise: step out of range");
  return add(scale(a0, sched_.sqrt_alpha_bar(k)), scale(eps, sched_.sqrt_one_minus(k)));
}

Tensor DiffusionPolicy::train_loss(const Tensor& a0, int k, const Tensor& eps,
                                   const Tensor& cond, const Tensor& state) const {
  Tensor noisy = add_noise(a0, k, eps);
  Tensor pred = den_.forward(noisy, k, cond, state);
  const Tensor& target = cfg_.denoiser.mode == PredictionMode::kSample ? a0 : eps;
  return mse(pred, target.data());
}

Tensor DiffusionPolicy::sample(const Tensor& cond, const Tensor& state, uint64_t seed) const {
  const int h = cfg_.denoiser.horizon;
  const int a = cfg_.denoiser.action_dim;
  const auto n = static_cast<size_t>(h) * a;
  RngStream rng(seed);
  std::vector<double> cur(n);
  for (auto& v : cur) v = rng.normal();
  const std::vector<int> steps = sched_.inference_steps(cfg_.k_infer);
  for (size_t i = 0; i < steps.size(); ++i) {
    const int k = steps[i];
    const int k_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
    std::vector<float> curf(n);
    for (size_t j = 0; j < n; ++j) curf[j] = static_cast<float>(cur[j]);
    Tensor out = den_.forward(Tensor::of({h, a}, std::move(curf)), k, cond, state);
    auto ov = out.data();
    for (float v : ov)
      if (!std::isfinite(v))
        throw NumericalError("sample: denoiser output non-finite at step " + std::to_string(k));
    const double sab = sched_.sqrt_alpha_bar(k);
    const double somb = sched_.sqrt_one_minus(k);
    const double sab_p = sched_.sqrt_alpha_bar(k_prev);
    const auto c = sched_.ddim_coeffs(k, k_prev, cfg_.eta);
    const double dir = std::sqrt(std::max(0.0, 1.0 - sched_.alpha_bar(k_prev) - c.sigma * c.sigma));
    for (size_t j = 0; j < n; ++j) {
      double x0, eh;
      if (cfg_.denoiser.mode == PredictionMode::kSample) {
        x0 = ov[j];
        eh = (cur[j] - sab * x0) / somb;
      } else {
        eh = ov[j];
        x0 = (cur[j] - somb * eh) / sab;
      }
      const double z = c.sigma > 0.0 ? rng.normal() : 0.0;
      cur[j] = sab_p * x0 + dir * eh + c.sigma * z;
    }
  }
  std::vector<float> out(n);
  for (size_t j = 0; j < n; ++j)
    out[j] = static_cast<float>(std::clamp(cur[j], -1.0, 1.0));
  return Tensor::of({h, a}, std::move(out));
}

void DiffusionPolicy::verify_mode_tag(const std::string& tag) const {
  if (tag != mode_name(cfg_.denoiser.mode))
    throw ConfigError("checkpoint prediction mode '" + tag + "' does not match configured '" +
                      mode_name(cfg_.denoiser.mode) + "'");
}

}  // namespace gswm
