// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/world_model.hpp"

#include <algorithm>
#include <utility>

#include "gswm/errors.hpp"

namespace gswm {

ResidualTrunk::ResidualTrunk(Registry& reg, const std::string& prefix, int in, int hidden,
                             int blocks, RngStream& rng)
    : input(reg, prefix + ".in", in, hidden, rng) {
  for (int i = 0; i < blocks; ++i) {
    const std::string b = prefix + ".block" + std::to_string(i);
    fc0.emplace_back(reg, b + ".fc0", hidden, hidden, rng);
    fc1.emplace_back(reg, b + ".fc1", hidden, hidden, rng);
  }
}

Tensor ResidualTrunk::forward(const Tensor& x) const {
  Tensor h = input.forward(x);
  for (size_t i = 0; i < fc0.size(); ++i) {
    Tensor inner = fc0[i].forward(activate(h, Act::kRelu), Act::kRelu);
    h = add(h, fc1[i].forward(inner));
  }
  return activate(h, Act::kRelu);
}

GaussianRegressor::GaussianRegressor(Registry& reg, const std::string& prefix,
                                     const RegressorConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      feat_proj_(reg, prefix + ".feat_proj", cfg.feature_channels, cfg.feature_width, rng),
      trunk_(reg, prefix + ".trunk", 3 + cfg.feature_width, cfg.trunk_width, cfg.trunk_blocks,
             rng),
      head_pos_(reg, prefix + ".head_pos", cfg.trunk_width, 3, rng),
      head_color_(reg, prefix + ".head_color", cfg.trunk_width, 3, rng),
      head_rot_(reg, prefix + ".head_rot", cfg.trunk_width, 4, rng),
      head_scale_(reg, prefix + ".head_scale", cfg.trunk_width, 3, rng),
      head_opacity_(reg, prefix + ".head_opacity", cfg.trunk_width, 1, rng) {}

Tensor GaussianRegressor::forward(const FeatureVolume& volume,
                                  const std::vector<Vec3d>& queries) const {
  if (volume.C != cfg_.feature_channels) {
    throw ConfigError("regressor: volume channels disagree with config");
  }
  const int n = static_cast<int>(queries.size());
  if (n == 0) return Tensor::zeros({0, kGaussianParamDim});

  std::vector<float> xyz_v(static_cast<size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    xyz_v[static_cast<size_t>(i) * 3 + 0] = static_cast<float>(queries[static_cast<size_t>(i)].x);
    xyz_v[static_cast<size_t>(i) * 3 + 1] = static_cast<float>(queries[static_cast<size_t>(i)].y);
    xyz_v[static_cast<size_t>(i) * 3 + 2] = static_cast<float>(queries[static_cast<size_t>(i)].z);
  }
  Tensor xyz = Tensor::of({n, 3}, std::move(xyz_v));

  Tensor feats = feat_proj_.forward(trilinear_gather(volume, queries));
  Tensor h = trunk_.forward(concat_cols({xyz, feats}));

  const Vec3d cell = (volume.bounds.max - volume.bounds.min) * (1.0 / volume.R);
  Tensor half_cell = broadcast_rows(
      Tensor::of({1, 3}, {static_cast<float>(0.5 * cell.x), static_cast<float>(0.5 * cell.y),
                          static_cast<float>(0.5 * cell.z)}),
      n);
  Tensor mu = add(xyz, mul(activate(head_pos_.forward(h), Act::kTanh), half_cell));
  Tensor color = activate(head_color_.forward(h), Act::kSigmoid);
  Tensor rot = row_normalize(
      add_row(head_rot_.forward(h), Tensor::of({1, 4}, {1.0f, 0.0f, 0.0f, 0.0f})));
  // The inner clamp keeps exp finite for any weights; the band covers
  // [scale_min, scale_max] so in-range values are untouched.
  Tensor scale = clamp(activate(clamp(head_scale_.forward(h), -16.0f, 8.0f), Act::kExp),
                       static_cast<float>(cfg_.scale_min), static_cast<float>(cfg_.scale_max));
  Tensor opacity = activate(head_opacity_.forward(h), Act::kSigmoid);
  return concat_cols({mu, color, rot, scale, opacity});
}

std::vector<GaussianPrimitive> GaussianRegressor::primitives(
    const FeatureVolume& volume, const std::vector<Vec3d>& queries) const {
  return unpack_gaussians(forward(volume, queries));
}

std::vector<Vec3d> select_query_points(const VoxelGrid& grid, int cap) {
  if (cap < 1) throw ContractError("select_query_points: cap must be positive");
  std::vector<std::pair<int, int64_t>> occupied;
  const int64_t cells = static_cast<int64_t>(grid.R) * grid.R * grid.R;
  for (int64_t i = 0; i < cells; ++i) {
    if (grid.occupancy[static_cast<size_t>(i)] > 0.0f) {
      occupied.emplace_back(grid.counts[static_cast<size_t>(i)], i);
    }
  }
  std::sort(occupied.begin(), occupied.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (occupied.size() > static_cast<size_t>(cap)) occupied.resize(static_cast<size_t>(cap));

  std::vector<Vec3d> centers;
  centers.reserve(occupied.size());
  for (const auto& [count, idx] : occupied) {
    const int ix = static_cast<int>(idx % grid.R);
    const int iy = static_cast<int>((idx / grid.R) % grid.R);
    const int iz = static_cast<int>(idx / (static_cast<int64_t>(grid.R) * grid.R));
    centers.push_back(grid.cell_center(ix, iy, iz));
  }
  return centers;
}

DeformationNet::DeformationNet(Registry& reg, const std::string& prefix,
                               const DeformationConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      trunk_(reg, prefix + ".trunk", kGaussianParamDim + cfg.action_dim, cfg.hidden, cfg.blocks,
             rng),
      out_(reg, prefix + ".out", cfg.hidden, cfg.delta_width(), rng) {
  std::fill(out_.W.raw().begin(), out_.W.raw().end(), 0.0f);
  std::fill(out_.b.raw().begin(), out_.b.raw().end(), 0.0f);
}

Tensor DeformationNet::delta(const Tensor& theta, std::span<const float> action) const {
  if (theta.ndim() != 2 || theta.dim(1) != kGaussianParamDim) {
    throw DimensionError("deformation: theta must be [N,14]");
  }
  if (action.size() != static_cast<size_t>(cfg_.action_dim)) {
    throw DimensionError("deformation: action width disagrees with config");
  }
  const int n = theta.dim(0);
  Tensor act_row = Tensor::of({1, cfg_.action_dim},
                              std::vector<float>(action.begin(), action.end()));
  Tensor x = concat_cols({theta, broadcast_rows(act_row, n)});
  return out_.forward(trunk_.forward(x));
}

Tensor apply_deformation(const Tensor& theta, const Tensor& delta, bool all_attributes,
                         double scale_min, double scale_max) {
  if (theta.ndim() != 2 || theta.dim(1) != kGaussianParamDim) {
    throw DimensionError("apply_deformation: theta must be [N,14]");
  }
  const int want = all_attributes ? kGaussianParamDim : 7;
  if (delta.ndim() != 2 || delta.dim(0) != theta.dim(0) || delta.dim(1) != want) {
    throw DimensionError("apply_deformation: delta width mismatch");
  }
  Tensor mu = add(slice_cols(theta, 0, 3), slice_cols(delta, 0, 3));
  Tensor rot = row_normalize(add(slice_cols(theta, 6, 10), slice_cols(delta, 3, 7)));
  Tensor color = slice_cols(theta, 3, 6);
  Tensor scale = slice_cols(theta, 10, 13);
  Tensor opacity = slice_cols(theta, 13, 14);
  if (all_attributes) {
    color = clamp(add(color, slice_cols(delta, 7, 10)), 0.0f, 1.0f);
    scale = clamp(add(scale, slice_cols(delta, 10, 13)), static_cast<float>(scale_min),
                  static_cast<float>(scale_max));
    opacity = clamp(add(opacity, slice_cols(delta, 13, 14)), 0.0f, 1.0f);
  }
  return concat_cols({mu, color, rot, scale, opacity});
}

double frame_loss(const RenderedFrame& rendered, std::span<const float> gt_color,
                  std::span<const float> gt_depth, double depth_scale) {
  const size_t pixels = static_cast<size_t>(rendered.width) * rendered.height;
  if (rendered.color.size() != pixels * 3 || rendered.depth.size() != pixels) {
    throw ContractError("frame_loss: frame buffers disagree with its size");
  }
  if (gt_color.size() != pixels * 3 || gt_depth.size() != pixels) {
    throw ContractError("frame_loss: ground truth size mismatch");
  }
  double loss = 0.0;
  for (size_t i = 0; i < pixels * 3; ++i) {
    const double d = static_cast<double>(rendered.color[i]) - gt_color[i];
    loss += d * d;
  }
  for (size_t i = 0; i < pixels; ++i) {
    const double d = static_cast<double>(rendered.depth[i]) - gt_depth[i];
    loss += depth_scale * d * d;
  }
  return loss;
}

WorldModel::WorldModel(Registry& reg, const std::string& prefix, const WorldModelConfig& cfg,
                       RngStream& rng)
    : cfg_(cfg),
      regressor_(reg, prefix + ".regressor", cfg.regressor, rng),
      deform_(reg, prefix + ".deform", cfg.deform, rng) {}

Tensor WorldModel::deform(const Tensor& theta, std::span<const float> action) const {
  Tensor d = deform_.delta(theta, action);
  return apply_deformation(theta, d, cfg_.deform.deform_all_attributes, cfg_.regressor.scale_min,
                           cfg_.regressor.scale_max);
}

Tensor WorldModel::loss_3d(const Tensor& theta, const Camera& cam, const RenderedFrame& target,
                           const RenderOptions& opts) const {
  return render_rgbd_loss(theta, cam, target, cfg_.depth_loss_scale, cfg_.use_rgb, cfg_.use_depth,
                          opts);
}

Tensor WorldModel::loss_4d(const Tensor& theta, std::span<const float> action, const Camera& cam,
                           const RenderedFrame& target_next, const RenderOptions& opts) const {
  if (cfg_.deform.deform_all_attributes) {
    return render_rgbd_loss(deform(theta, action), cam, target_next, cfg_.depth_loss_scale,
                            cfg_.use_rgb, cfg_.use_depth, opts);
  }
  // Position and rotation deltas are folded into the loss node, which adds
  // them to theta in double; the renderer normalizes the updated quaternion
  // itself, so the explicit renormalization in deform() is not repeated.
  Tensor d = deform_.delta(theta, action);
  const int n = theta.dim(0);
  Tensor z3 = Tensor::zeros({n, 3});
  Tensor full = concat_cols(
      {slice_cols(d, 0, 3), z3, slice_cols(d, 3, 7), z3, Tensor::zeros({n, 1})});
  return render_rgbd_loss(theta, full, cam, target_next, cfg_.depth_loss_scale, cfg_.use_rgb,
                          cfg_.use_depth, opts);
}

}  // namespace gswm
