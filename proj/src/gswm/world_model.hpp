// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "gswm/nn.hpp"
#include "gswm/pointcloud.hpp"
#include "gswm/splat.hpp"

namespace gswm {

// Shared residual MLP: input layer, then blocks of h + fc1(relu(fc0(relu(h)))),
// finishing with a relu on the hidden state.
struct ResidualTrunk {
  DenseLayer input;
  std::vector<DenseLayer> fc0, fc1;

  ResidualTrunk() = default;
  ResidualTrunk(Registry& reg, const std::string& prefix, int in, int hidden, int blocks,
                RngStream& rng);
  Tensor forward(const Tensor& x) const;
};

struct RegressorConfig {
  int feature_channels = 64;
  int feature_width = 128;  // learned lift of the sampled volume feature
  int trunk_width = 64;
  int trunk_blocks = 2;
  double scale_min = 1e-4;
  double scale_max = 0.2;
};

// Maps (query point, sampled volume feature) to one gaussian per query.
// Activations keep every attribute inside the primitive invariants for any
// finite weights: position stays within half a cell of its anchor (tanh),
// color and opacity are logistic, scale is exp clamped to the config range,
// rotation is a normalized 4-vector biased toward identity.
class GaussianRegressor {
 public:
  GaussianRegressor() = default;
  GaussianRegressor(Registry& reg, const std::string& prefix, const RegressorConfig& cfg,
                    RngStream& rng);

  // Packed primitives [N,14]; queries outside the bounds sample the clamped
  // boundary cell. N = 0 yields an empty [0,14] constant.
  Tensor forward(const FeatureVolume& volume, const std::vector<Vec3d>& queries) const;
  std::vector<GaussianPrimitive> primitives(const FeatureVolume& volume,
                                            const std::vector<Vec3d>& queries) const;

  const RegressorConfig& config() const { return cfg_; }

 private:
  RegressorConfig cfg_;
  DenseLayer feat_proj_;
  ResidualTrunk trunk_;
  DenseLayer head_pos_, head_color_, head_rot_, head_scale_, head_opacity_;
};

// Anchor gaussians at occupied-voxel centers, densest cells first (ties by
// cell index), capped at `cap` queries.
std::vector<Vec3d> select_query_points(const VoxelGrid& grid, int cap = 2048);

struct DeformationConfig {
  int action_dim = 3;
  int hidden = 64;
  int blocks = 2;
  // Narrow reading deforms position + rotation (width 7); the generic reading
  // deforms every packed attribute (width 14).
  bool deform_all_attributes = false;
  int delta_width() const { return deform_all_attributes ? kGaussianParamDim : 7; }
};

// Residual MLP over [packed primitive | action] emitting per-primitive
// parameter deltas. The output layer starts at zero so an untrained network
// is exactly the identity deformation.
class DeformationNet {
 public:
  DeformationNet() = default;
  DeformationNet(Registry& reg, const std::string& prefix, const DeformationConfig& cfg,
                 RngStream& rng);

  // [N, delta_width] from packed [N,14] and one action vector.
  Tensor delta(const Tensor& theta, std::span<const float> action) const;

  const DeformationConfig& config() const { return cfg_; }

 private:
  DeformationConfig cfg_;
  ResidualTrunk trunk_;
  DenseLayer out_;
};

// theta + delta with invariants re-established: position adds, rotation adds
// then renormalizes (bit-exact passthrough when the delta is zero and the
// quaternion is already unit), remaining attributes pass through or, under
// the all-attributes flag, add and clamp back into range.
Tensor apply_deformation(const Tensor& theta, const Tensor& delta, bool all_attributes,
                         double scale_min, double scale_max);

// Sum over pixels of squared color error plus depth_scale times squared
// depth error, in double. Frame sizes must match (ContractError).
double frame_loss(const RenderedFrame& rendered, std::span<const float> gt_color,
                  std::span<const float> gt_depth, double depth_scale = 1.0);

struct WorldModelConfig {
  RegressorConfig regressor;
  DeformationConfig deform;
  double depth_loss_scale = 1.0;
  bool use_rgb = true;
  bool use_depth = true;
};

// Regressor + deformation net + reconstruction losses, one registry prefix
// per part ("<prefix>.regressor", "<prefix>.deform") so warm-up can freeze
// the deformation parameters alone.
class WorldModel {
 public:
  WorldModel() = default;
  WorldModel(Registry& reg, const std::string& prefix, const WorldModelConfig& cfg,
             RngStream& rng);

  Tensor regress(const FeatureVolume& volume, const std::vector<Vec3d>& queries) const {
    return regressor_.forward(volume, queries);
  }
  // One dynamics step: theta + p_phi(theta, action).
  Tensor deform(const Tensor& theta, std::span<const float> action) const;

  // Reconstruction against the current frame.
  Tensor loss_3d(const Tensor& theta, const Camera& cam, const RenderedFrame& target,
                 const RenderOptions& opts = {}) const;
  // Deform by the step action, render, compare against the next frame.
  Tensor loss_4d(const Tensor& theta, std::span<const float> action, const Camera& cam,
                 const RenderedFrame& target_next, const RenderOptions& opts = {}) const;

  const GaussianRegressor& regressor() const { return regressor_; }
  const DeformationNet& deformation() const { return deform_; }
  const WorldModelConfig& config() const { return cfg_; }

 private:
  WorldModelConfig cfg_;
  GaussianRegressor regressor_;
  DeformationNet deform_;
};

}  // namespace gswm
