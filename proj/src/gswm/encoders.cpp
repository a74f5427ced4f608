// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/encoders.hpp"

#include <vector>

#include "gswm/errors.hpp"

namespace gswm {

LocalEncoder::LocalEncoder(Registry& reg, const std::string& prefix,
                           const LocalEncoderConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      l0_(reg, prefix + ".mlp0", 3, cfg.hidden[0], rng),
      l1_(reg, prefix + ".mlp1", cfg.hidden[0], cfg.hidden[1], rng),
      l2_(reg, prefix + ".mlp2", cfg.hidden[1], cfg.hidden[2], rng),
      proj_(reg, prefix + ".proj", cfg.hidden[2], cfg.out_width, rng),
      n0_(reg, prefix + ".norm0", cfg.hidden[0]),
      n1_(reg, prefix + ".norm1", cfg.hidden[1]),
      n2_(reg, prefix + ".norm2", cfg.hidden[2]),
      nproj_(reg, prefix + ".norm_proj", cfg.out_width) {}

Tensor LocalEncoder::point_features(const Tensor& xyz) const {
  Tensor h = activate(n0_.forward(l0_.forward(xyz)), Act::kRelu);
  h = activate(n1_.forward(l1_.forward(h)), Act::kRelu);
  return activate(n2_.forward(l2_.forward(h)), Act::kRelu);
}

Tensor LocalEncoder::forward(const PointCloud& pc) const {
  pc.validate();
  if (pc.size() > static_cast<size_t>(cfg_.max_points)) {
    throw ContractError("local encoder: cloud exceeds max_points");
  }
  if (pc.size() == 0) return Tensor::zeros({1, cfg_.out_width});
  const int n = static_cast<int>(pc.size());
  Tensor xyz = Tensor::of({n, 3}, pc.xyz);
  Tensor pooled = row_max(point_features(xyz));
  return nproj_.forward(proj_.forward(pooled));
}

GlobalEncoder::GlobalEncoder(Registry& reg, const std::string& prefix,
                             const GlobalEncoderConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      down0_(reg, prefix + ".down0", cfg.in_channels, cfg.channels[0], 1, rng),
      down1_(reg, prefix + ".down1", cfg.channels[0], cfg.channels[1], 2, rng),
      down2_(reg, prefix + ".down2", cfg.channels[1], cfg.channels[1], 1, rng),
      down3_(reg, prefix + ".down3", cfg.channels[1], cfg.channels[2], 2, rng),
      down4_(reg, prefix + ".down4", cfg.channels[2], cfg.channels[2], 1, rng),
      down5_(reg, prefix + ".down5", cfg.channels[2], cfg.channels[3], 2, rng),
      down6_(reg, prefix + ".down6", cfg.channels[3], cfg.channels[3], 1, rng),
      dn0_(reg, prefix + ".dnorm0", cfg.channels[0]),
      dn1_(reg, prefix + ".dnorm1", cfg.channels[1]),
      dn2_(reg, prefix + ".dnorm2", cfg.channels[1]),
      dn3_(reg, prefix + ".dnorm3", cfg.channels[2]),
      dn4_(reg, prefix + ".dnorm4", cfg.channels[2]),
      dn5_(reg, prefix + ".dnorm5", cfg.channels[3]),
      dn6_(reg, prefix + ".dnorm6", cfg.channels[3]),
      up0_(reg, prefix + ".up0", cfg.channels[3], cfg.channels[2], rng),
      up1_(reg, prefix + ".up1", cfg.channels[2], cfg.channels[1], rng),
      up2_(reg, prefix + ".up2", cfg.channels[1], cfg.channels[0], rng),
      un0_(reg, prefix + ".unorm0", cfg.channels[2]),
      un1_(reg, prefix + ".unorm1", cfg.channels[1]),
      un2_(reg, prefix + ".unorm2", cfg.channels[0]),
      head_(reg, prefix + ".head", cfg.channels[0], cfg.out_channels, rng) {}

Tensor GlobalEncoder::grid_channels(const VoxelGrid& grid) {
  const int64_t cells = static_cast<int64_t>(grid.R) * grid.R * grid.R;
  std::vector<float> data(static_cast<size_t>(4 * cells));
  for (int64_t i = 0; i < cells; ++i) {
    data[static_cast<size_t>(i)] = grid.occupancy[static_cast<size_t>(i)];
    for (int c = 0; c < 3; ++c) {
      data[static_cast<size_t>((c + 1) * cells + i)] = grid.color[static_cast<size_t>(3 * i + c)];
    }
  }
  return Tensor::of({4, grid.R, grid.R, grid.R}, std::move(data));
}

Tensor GlobalEncoder::encode(const Tensor& x, PadMode pad) const {
  auto stage = [&](const Tensor& h, const Conv3dLayer& conv, const ChannelNormLayer& norm) {
    return activate(norm.forward(conv.forward(h, pad)), Act::kRelu);
  };
  Tensor h = stage(x, down0_, dn0_);
  h = stage(h, down1_, dn1_);
  h = stage(h, down2_, dn2_);
  h = stage(h, down3_, dn3_);
  h = stage(h, down4_, dn4_);
  h = stage(h, down5_, dn5_);
  return stage(h, down6_, dn6_);
}

Tensor GlobalEncoder::forward_channels(const Tensor& x, PadMode pad) const {
  if (x.ndim() != 4 || x.dim(0) != cfg_.in_channels) {
    throw DimensionError("global encoder: input must be [in_channels,R,R,R]");
  }
  const int R = x.dim(1);
  if (x.dim(2) != R || x.dim(3) != R) {
    throw DimensionError("global encoder: input must be cubic");
  }
  if (R % 8 != 0) throw ConfigError("global encoder: resolution must be divisible by 8");
  Tensor h = encode(x, pad);
  h = activate(un0_.forward(up0_.forward(h)), Act::kRelu);
  h = activate(un1_.forward(up1_.forward(h)), Act::kRelu);
  h = activate(un2_.forward(up2_.forward(h)), Act::kRelu);
  return head_.forward(channels_to_rows(h));
}

FeatureVolume GlobalEncoder::forward(const VoxelGrid& grid, PadMode pad) const {
  FeatureVolume vol;
  vol.R = grid.R;
  vol.C = cfg_.out_channels;
  vol.bounds = grid.bounds;
  vol.values = forward_channels(grid_channels(grid), pad);
  return vol;
}

StateEncoder::StateEncoder(Registry& reg, const std::string& prefix,
                           const StateEncoderConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      l0_(reg, prefix + ".mlp0", cfg.in_dim, cfg.hidden, rng),
      l1_(reg, prefix + ".mlp1", cfg.hidden, cfg.out_width, rng) {}

Tensor StateEncoder::forward(const Tensor& q) const {
  if (q.ndim() != 2 || q.dim(0) != 1 || q.dim(1) != cfg_.in_dim) {
    throw DimensionError("state encoder: q must be [1,in_dim]");
  }
  return l1_.forward(l0_.forward(q, Act::kRelu));
}

ConditionBuilder::ConditionBuilder(Registry& reg, const std::string& prefix,
                                   const ConditionConfig& cfg, RngStream& rng)
    : cfg_(cfg), pool_proj_(reg, prefix + ".pool_proj", cfg.volume_channels, cfg.pooled_width, rng) {}

Tensor ConditionBuilder::forward(const Tensor& local, const FeatureVolume& volume,
                                 const Tensor& state) const {
  if (local.ndim() != 2 || local.dim(0) != 1 || local.dim(1) != cfg_.local_width) {
    throw ConfigError("condition: local width mismatch");
  }
  if (volume.C != cfg_.volume_channels || volume.values.dim(1) != cfg_.volume_channels) {
    throw ConfigError("condition: volume channel mismatch");
  }
  if (state.ndim() != 2 || state.dim(0) != 1 || state.dim(1) != cfg_.state_width) {
    throw ConfigError("condition: state width mismatch");
  }
  Tensor pooled = pool_proj_.forward(mean_rows(volume.values));
  return concat_cols({local, pooled, state});
}

}  // namespace gswm
