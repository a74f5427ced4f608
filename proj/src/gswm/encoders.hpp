// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "gswm/nn.hpp"
#include "gswm/pointcloud.hpp"
#include "gswm/tensor.hpp"

namespace gswm {

// Multi-level scene representation: a compact feature from the cropped point
// cloud, a dense feature volume from the voxel grid, and a robot-state
// embedding. The condition vector r = [local | pooled global | state] feeds
// both the gaussian regressor and the action denoiser.

struct LocalEncoderConfig {
  int out_width = 256;
  int max_points = 512;
  std::array<int, 3> hidden = {64, 128, 256};
};

// Per-point MLP (dense + layer norm + relu, three stages), elementwise max
// over points, then a projection head with layer norm. Colors are ignored;
// the encoder consumes coordinates only.
class LocalEncoder {
 public:
  LocalEncoder() = default;
  LocalEncoder(Registry& reg, const std::string& prefix, const LocalEncoderConfig& cfg,
               RngStream& rng);

  // [1, out_width]. Empty cloud yields a zero constant; N > max_points throws
  // ContractError.
  Tensor forward(const PointCloud& pc) const;
  // Per-point features before pooling, [N, hidden[2]]; exposed for tests.
  Tensor point_features(const Tensor& xyz) const;

  const LocalEncoderConfig& config() const { return cfg_; }

 private:
  LocalEncoderConfig cfg_;
  DenseLayer l0_, l1_, l2_, proj_;
  LayerNormLayer n0_, n1_, n2_, nproj_;
};

struct GlobalEncoderConfig {
  int in_channels = 4;  // occupancy + mean rgb
  std::array<int, 4> channels = {8, 16, 32, 64};
  int out_channels = 64;
};

// 3D convolutional encoder-decoder over the voxel grid: three stride-2
// stages down, three transpose-conv stages up, skip-free, then a per-cell
// linear head emitting out_channels at the input resolution. Each conv is
// followed by channel normalization and relu.
class GlobalEncoder {
 public:
  GlobalEncoder() = default;
  GlobalEncoder(Registry& reg, const std::string& prefix, const GlobalEncoderConfig& cfg,
                RngStream& rng);

  // Input grid resolution must be divisible by 8 (ConfigError otherwise).
  FeatureVolume forward(const VoxelGrid& grid, PadMode pad = PadMode::kZero) const;
  // Occupancy + mean color stacked as [in_channels, R, R, R].
  static Tensor grid_channels(const VoxelGrid& grid);

  // Bottleneck features [channels[3], R/8, R/8, R/8]; exposed for tests.
  Tensor encode(const Tensor& x, PadMode pad = PadMode::kZero) const;
  // Full pass on a raw [in_channels, R, R, R] tensor -> [R^3, out_channels].
  Tensor forward_channels(const Tensor& x, PadMode pad = PadMode::kZero) const;

  const GlobalEncoderConfig& config() const { return cfg_; }

 private:
  GlobalEncoderConfig cfg_;
  Conv3dLayer down0_, down1_, down2_, down3_, down4_, down5_, down6_;
  ChannelNormLayer dn0_, dn1_, dn2_, dn3_, dn4_, dn5_, dn6_;
  ConvT3dLayer up0_, up1_, up2_;
  ChannelNormLayer un0_, un1_, un2_;
  DenseLayer head_;
};

struct StateEncoderConfig {
  int in_dim = 0;
  int hidden = 64;
  int out_width = 64;
};

// Two-layer MLP with relu between the layers.
class StateEncoder {
 public:
  StateEncoder() = default;
  StateEncoder(Registry& reg, const std::string& prefix, const StateEncoderConfig& cfg,
               RngStream& rng);

  Tensor forward(const Tensor& q) const;  // [1, in_dim] -> [1, out_width]

  const StateEncoderConfig& config() const { return cfg_; }

 private:
  StateEncoderConfig cfg_;
  DenseLayer l0_, l1_;
};

struct ConditionConfig {
  int local_width = 256;
  int volume_channels = 64;
  int pooled_width = 128;
  int state_width = 64;
  int width() const { return local_width + pooled_width + state_width; }
};

// r = [local | proj(mean over cells of volume) | state], fixed order.
class ConditionBuilder {
 public:
  ConditionBuilder() = default;
  ConditionBuilder(Registry& reg, const std::string& prefix, const ConditionConfig& cfg,
                   RngStream& rng);

  // Widths are checked against the config; mismatch throws ConfigError.
  Tensor forward(const Tensor& local, const FeatureVolume& volume, const Tensor& state) const;

  const ConditionConfig& config() const { return cfg_; }

 private:
  ConditionConfig cfg_;
  DenseLayer pool_proj_;
};

}  // namespace gswm
