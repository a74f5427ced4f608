// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gswm/dataset.hpp"
#include "gswm/diffusion.hpp"
#include "gswm/encoders.hpp"
#include "gswm/toy_env.hpp"
#include "gswm/world_model.hpp"

namespace gswm {

// Full agent wiring: observation -> point cloud -> (local, global, state)
// features -> condition vector feeding both the gaussian regressor and the
// action denoiser. Dependent widths (condition slices, denoiser inputs,
// regressor feature channels) are derived from the parts, so a config edits
// one knob and the rest follows.
struct PipelineConfig {
  ChunkSpec chunk;
  int action_dim = 3;
  int state_dim = 3;  // proprioception width per frame; the denoiser sees n_obs frames
  Box bounds{{-0.5, -0.5, 0.0}, {0.5, 0.5, 1.0}};
  int grid_resolution = 8;
  int query_cap = 96;
  LocalEncoderConfig local{128, 96, {32, 64, 128}};
  GlobalEncoderConfig global{4, {8, 16, 32, 64}, 32};
  StateEncoderConfig state{0, 32, 32};
  ConditionConfig condition{128, 32, 64, 32};
  WorldModelConfig world{{32, 64, 48, 2, 1e-4, 0.2}, {3, 48, 2, false}, 1.0, true, true};
  DiffusionConfig diffusion{{4, 3, 224, 6, 64, 2, 16, PredictionMode::kSample}, 100, 10, 0.0};

  int stacked_state_dim() const { return chunk.n_obs * state_dim; }
  void validate() const;
};

// Returns a copy with every dependent width rewired from the independent
// knobs, then validated.
PipelineConfig wire_pipeline(const PipelineConfig& cfg);

// Everything derived from one observation that the losses and the sampler
// share: the processed cloud, the voxel feature volume, the gaussian anchor
// queries, and the condition vector (which already embeds the state).
struct SceneEncoding {
  PointCloud cloud;
  VoxelGrid grid;
  FeatureVolume volume;
  std::vector<Vec3d> queries;
  Tensor state_row;   // [1, n_obs * state_dim], normalized
  Tensor condition;   // [1, condition width]
};

class Dp4Policy {
 public:
  Dp4Policy() = default;
  Dp4Policy(Registry& reg, const std::string& prefix, const PipelineConfig& cfg, RngStream& rng);

  // rgb [H*W*3], depth [H*W]; state is the normalized stacked proprioception.
  SceneEncoding encode(std::span<const float> rgb, std::span<const float> depth,
                       const Camera& cam, std::vector<float> stacked_state,
                       uint64_t fps_seed) const;

  // Packed gaussians [N,14] regressed at the encoding's anchor queries.
  Tensor regress(const SceneEncoding& enc) const;

  // Denoising loss for one normalized action chunk at diffusion step k.
  Tensor action_loss(const SceneEncoding& enc, const Tensor& chunk, int k,
                     const Tensor& eps) const;

  // Normalized [horizon, action_dim] chunk in [-1,1].
  Tensor sample_chunk(const SceneEncoding& enc, uint64_t seed) const;

  const PipelineConfig& config() const { return cfg_; }
  const WorldModel& world() const { return world_; }
  const DiffusionPolicy& diffusion() const { return diffusion_; }
  const std::string& deform_prefix() const { return deform_prefix_; }

 private:
  PipelineConfig cfg_;
  LocalEncoder local_;
  GlobalEncoder global_;
  StateEncoder state_;
  ConditionBuilder cond_;
  WorldModel world_;
  DiffusionPolicy diffusion_;
  std::string deform_prefix_;
};

// Normalized action chunk for a query at episode step t: rows are the actions
// at steps t - (n_obs - 1) .. t - (n_obs - 1) + horizon - 1, indices clamped
// to the episode range.
Tensor make_action_chunk(const DemoEpisode& ep, int t, const ChunkSpec& spec,
                         const Normalizer& action_norm);

// Normalized states of the trailing n_obs frames ending at t, oldest first,
// indices clamped to the episode start.
std::vector<float> make_stacked_state(const DemoEpisode& ep, int t, const ChunkSpec& spec,
                                      const Normalizer& state_norm);

// Receding-horizon rollout driver: queries the policy every n_act env steps,
// executes the chunk's window open-loop in between, and tracks the state
// stack across steps. Matches the PolicyFn signature used by the env rollout
// helpers; a call with step == 0 resets the episode state.
class ChunkedController {
 public:
  ChunkedController(const Dp4Policy& policy, const Camera& cam, const Normalizer& action_norm,
                    const Normalizer& state_norm, uint64_t seed);

  Vec3d act(const Scene& scene, int step);
  void reset();

 private:
  const Dp4Policy* policy_;
  Camera cam_;
  Normalizer action_norm_, state_norm_;
  uint64_t seed_ = 0;
  uint64_t queries_ = 0;
  std::vector<std::vector<float>> history_;      // normalized per-frame states
  std::vector<std::vector<float>> pending_;      // raw actions not yet executed
};

}  // namespace gswm
