// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gswm/nn.hpp"
#include "gswm/rng.hpp"
#include "gswm/tensor.hpp"

namespace gswm {

// Forward-noising schedule plus the coefficients of the deterministic
// denoising update. alpha_bar follows the squared-cosine profile with the
// standard 0.008 offset; per-step beta is capped at 0.999 so alpha_bar stays
// strictly positive. Step 0 carries no noise: alpha_bar(0) == 1 exactly.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;  // empty shell; usable only after assignment
  explicit NoiseSchedule(int k_train);
  int k_train() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int k) const;
  double sqrt_alpha_bar(int k) const;
  double sqrt_one_minus(int k) const;

  // Coefficients of the update a_prev = alpha * (a_k - gamma * eps_hat)
  // + sigma * z for a jump k -> k_prev with k_prev < k. eta = 0 makes the
  // update deterministic (sigma = 0).
  struct StepCoeffs {
    double alpha = 0.0;
    double gamma = 0.0;
    double sigma = 0.0;
  };
  StepCoeffs ddim_coeffs(int k, int k_prev, double eta = 0.0) const;

  // Descending ladder of k_infer steps through [1, k_train]; the update at
  // the last entry jumps to step 0.
  std::vector<int> inference_steps(int k_infer) const;

 private:
  std::vector<double> alpha_bar_;
};

// Per-dimension affine map between raw values on [lo, hi] and normalized
// values on [-1, 1]. Degenerate dimensions (lo == hi) normalize to 0 and
// denormalize back to the constant.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> lo, std::vector<double> hi);
  int dims() const { return static_cast<int>(lo_.size()); }
  double normalize(double v, int d) const;
  double denormalize(double u, int d) const;
  std::vector<float> normalize_row(std::span<const float> v) const;
  std::vector<float> denormalize_row(std::span<const float> v) const;
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }

 private:
  std::vector<double> lo_, hi_;
};

// Per-dimension min/max over every row. Throws ContractError on an empty
// dataset and DimensionError on ragged rows.
Normalizer fit_normalizer(const std::vector<std::vector<float>>& rows);

// Receding-horizon chunk layout: a policy query covers `horizon` steps but
// only the trailing `n_act` of them are executed before the next query;
// `n_obs` is the observation stack the conditioning was built from.
struct ChunkSpec {
  int horizon = 4;
  int n_obs = 2;
  int n_act = 3;
};

// The trailing n_act rows of a [horizon, action_dim] chunk, as a detached
// copy. Throws ConfigError when n_act is outside [1, horizon].
Tensor execute_window(const Tensor& chunk, const ChunkSpec& spec);

enum class PredictionMode { kSample, kEpsilon };
const char* mode_name(PredictionMode m);
PredictionMode mode_from_name(const std::string& name);

struct DenoiserConfig {
  int horizon = 4;
  int action_dim = 7;
  int cond_dim = 448;
  int state_dim = 7;
  int width = 256;
  int blocks = 3;
  int step_embed_dim = 32;
  PredictionMode mode = PredictionMode::kSample;
};

// Sinusoidal features of a diffusion step index: dim/2 sine, dim/2 cosine
// values over geometrically spaced frequencies. Constant leaf, [1, dim].
Tensor sinusoidal_features(int k, int dim);

// Temporal conv network over the horizon axis. Each timestep sees the action
// row concatenated with the conditioning vector and the robot state; residual
// blocks of kernel-3 convolutions run along the time axis, with a learned
// projection of the step features added per block. The head maps back to one
// action row per timestep; its meaning (denoised sample or noise estimate)
// follows the configured prediction mode.
class ConditionalDenoiser {
 public:
  ConditionalDenoiser() = default;
  ConditionalDenoiser(Registry& reg, const std::string& prefix, const DenoiserConfig& cfg,
                      RngStream& rng);
  // chunk: [horizon, action_dim], cond: [1, cond_dim], state: [1, state_dim].
  Tensor forward(const Tensor& chunk, int k, const Tensor& cond, const Tensor& state) const;
  const DenoiserConfig& config() const { return cfg_; }

 private:
  struct Block {
    DenseLayer emb;
    Conv1dLayer c0, c1;
  };
  DenoiserConfig cfg_;
  DenseLayer in_proj_;
  std::vector<Block> blocks_;
  DenseLayer head_;
};

struct DiffusionConfig {
  DenoiserConfig denoiser;
  int k_train = 100;
  int k_infer = 10;
  double eta = 0.0;
};

// Conditional denoising diffusion over action chunks: forward noising for
// training, deterministic multi-step denoising for inference.
class DiffusionPolicy {
 public:
  DiffusionPolicy() = default;  // empty shell; usable only after assignment
  DiffusionPolicy(Registry& reg, const std::string& prefix, const DiffusionConfig& cfg,
                  RngStream& rng);
  const NoiseSchedule& schedule() const { return sched_; }
  const ConditionalDenoiser& denoiser() const { return den_; }
  const DiffusionConfig& config() const { return cfg_; }

  // sqrt(alpha_bar(k)) * a0 + sqrt(1 - alpha_bar(k)) * eps; identity at k=0.
  Tensor add_noise(const Tensor& a0, int k, const Tensor& eps) const;

  // Noises a0 to step k, runs the denoiser, and returns the mean squared
  // error against the mode's target: a0 in sample mode, eps in epsilon mode.
  Tensor train_loss(const Tensor& a0, int k, const Tensor& eps, const Tensor& cond,
                    const Tensor& state) const;

  // Denoises a seeded unit-gaussian chunk through k_infer steps and clips the
  // result to [-1, 1]. Pure in (weights, cond, state, seed); with eta = 0 no
  // randomness beyond the seed enters.
  Tensor sample(const Tensor& cond, const Tensor& state, uint64_t seed) const;

  // Guards checkpoint restores: throws ConfigError when the stored prediction
  // mode tag differs from the configured one.
  void verify_mode_tag(const std::string& tag) const;

 private:
  DiffusionConfig cfg_;
  NoiseSchedule sched_;
  ConditionalDenoiser den_;
};

}  // namespace gswm
