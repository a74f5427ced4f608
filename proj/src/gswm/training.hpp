// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gswm/checkpoint.hpp"
#include "gswm/policy.hpp"

namespace gswm {

inline constexpr const char* kCodeVersion = "gswm 0.1.0";

struct TrainConfig {
  double lambda_3d = 0.1;
  double lambda_4d = 0.01;
  int batch = 32;
  int epochs = 300;
  int warmup_iters = 500;
  uint64_t seed = 0;
  bool use_rgb_3d = true;
  bool use_depth_3d = true;
  bool use_dynamics = true;
  // Future-scene step action: the recorded expert action by default, the
  // policy's own sampled action when set.
  bool future_from_policy = false;
  // Deterministic mode zeroes the wallclock column so metric logs and
  // checkpoints are bit-reproducible per seed.
  bool deterministic = true;
  // Reconstruction terms are averaged over this many samples per batch; the
  // denoising term always covers the whole batch.
  int recon_per_batch = 8;
  int checkpoint_every = 100;  // epochs
  double lr = 1e-3;
  PipelineConfig pipeline;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
// FNV-1a over the canonical dump; resume compares it against the stored one.
uint64_t config_fingerprint(const nlohmann::json& j);

// Pipeline with dependent widths wired and the supervision channel flags
// copied into the world model.
PipelineConfig resolved_pipeline(const TrainConfig& cfg);

// One training example with every random draw made in advance, so the loss
// is a pure function of (weights, batch).
struct BatchSample {
  const DemoEpisode* episode = nullptr;
  int t = 0;
  int k = 1;
  std::vector<float> eps;  // [horizon * action_dim]
  uint64_t fps_seed = 0;
  uint64_t future_seed = 0;
};

struct LossParts {
  Tensor total;
  double action = 0.0;
  double recon3d = 0.0;
  double recon4d = 0.0;
};

// L = L_action + lambda_3d * L_3D + lambda_4d * L_4D. The denoising term
// averages over the whole batch; the reconstruction terms average per-pixel
// error over the first `recon_count` samples. Disabled terms report exactly
// zero and their graphs are never built.
LossParts joint_loss(const Dp4Policy& policy, const DemoDataset& data,
                     std::span<const BatchSample> batch, size_t recon_count,
                     const TrainConfig& cfg);

struct MetricsRow {
  int64_t iter = 0;
  double total = 0.0, action = 0.0, recon3d = 0.0, recon4d = 0.0;
  double lambda_3d = 0.0, lambda_4d = 0.0, lr = 0.0, wallclock = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

enum class TrainStatus { kCompleted, kNumericalAbort };

struct TrainResult {
  TrainStatus status = TrainStatus::kCompleted;
  int epochs_run = 0;
  int64_t steps = 0;
  double first_epoch_action = 0.0;
  double final_epoch_action = 0.0;
  std::string checkpoint_stem;  // last saved checkpoint (final on success)
  std::string metrics_path;
};

// Full optimization run into out_dir: checkpoint_last every checkpoint_every
// epochs, checkpoint_final plus manifest.json on completion, metrics.csv one
// row per optimizer step. The deformation parameters stay frozen for the
// first warmup_iters steps, and for the whole run when use_dynamics is off.
// A non-finite loss aborts with the last good checkpoint retained. With
// resume=true the run continues from out_dir/checkpoint_last; a config
// fingerprint mismatch raises StateError.
TrainResult train(const DemoDataset& data, const TrainConfig& cfg, const std::string& out_dir,
                  bool resume = false);

// Model rebuilt from a checkpoint's embedded config; parameter values and
// normalizers restored, prediction-mode tag verified.
struct PolicyBundle {
  Registry reg;
  Dp4Policy policy;
  TrainConfig cfg;
  TaskKind task = TaskKind::kReach;
  EnvConfig env;
  Camera cam;
  Normalizer action_norm, state_norm;
  int64_t step = 0;
  int epoch = 0;
};

PolicyBundle load_policy(const std::string& stem);

struct EvalEpisode {
  uint64_t seed = 0;
  bool success = false;
  int steps = 0;
};

struct EvalReport {
  double success_rate = 0.0;
  double mean_steps = 0.0;
  std::vector<EvalEpisode> episodes;
};

// Closed-loop rollouts with the receding-horizon controller; episode scenes
// follow the same seed derivation as the env rollout helper.
EvalReport evaluate_policy(const Dp4Policy& policy, const Camera& cam,
                           const Normalizer& action_norm, const Normalizer& state_norm,
                           TaskKind task, int episodes, uint64_t seed, const EnvConfig& env);

nlohmann::json eval_report_to_json(const EvalReport& report);

struct AblationCell {
  std::string name;
  bool use_rgb_3d = false;
  bool use_depth_3d = false;
  bool use_dynamics = false;
};

// The supervision ladder: none, images only, images plus dynamics.
std::vector<AblationCell> default_ablation_cells();

struct AblationRow {
  std::string cell;
  bool use_rgb_3d = false, use_depth_3d = false, use_dynamics = false;
  uint64_t seed = 0;
  double success = 0.0;
  double loss_action = 0.0, loss_3d = 0.0, loss_4d = 0.0;
};

// Trains and evaluates every cell x seed combination (cell directories under
// out_dir) and returns one row per cell x seed, cells outermost.
std::vector<AblationRow> ablate(const DemoDataset& data, const TrainConfig& base,
                                const std::vector<AblationCell>& cells,
                                const std::vector<uint64_t>& seeds, int eval_episodes,
                                uint64_t eval_seed, const std::string& out_dir);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

struct SweepRow {
  double lambda_3d = 0.0, lambda_4d = 0.0;
  uint64_t seed = 0;
  double success = 0.0;
  double loss_action = 0.0;
};

// Trains and evaluates one run per (lambda_3d, lambda_4d) grid cell.
std::vector<SweepRow> lambda_sweep(const DemoDataset& data, const TrainConfig& base,
                                   const std::vector<double>& grid_3d,
                                   const std::vector<double>& grid_4d, int eval_episodes,
                                   uint64_t eval_seed, const std::string& out_dir);

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace gswm
