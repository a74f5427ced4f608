// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gswm/camera.hpp"
#include "gswm/tensor.hpp"

namespace gswm {

// World-frame points, row-major [N,3]; colors optional (empty or [N,3] in [0,1]).
struct PointCloud {
  std::vector<float> xyz;
  std::vector<float> rgb;

  size_t size() const { return xyz.size() / 3; }
  bool has_color() const { return !rgb.empty(); }
  Vec3d point(size_t i) const { return {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]}; }
  void validate() const;
};

struct Box {
  Vec3d min, max;
  void validate() const;
  bool contains(const Vec3d& p) const {  // min-inclusive, max-exclusive
    return p.x >= min.x && p.x < max.x && p.y >= min.y && p.y < max.y && p.z >= min.z &&
           p.z < max.z;
  }
};

// Binary occupancy plus mean color per occupied cell. Cell (ix,iy,iz) is at
// flat index (iz*R + iy)*R + ix; the matching feature-volume row uses the
// same layout.
struct VoxelGrid {
  int R = 0;
  Box bounds;
  std::vector<float> occupancy;  // [R^3], 0 or 1
  std::vector<float> color;      // [R^3 * 3], mean color, zero where empty
  std::vector<int> counts;       // [R^3], points per cell

  int64_t cell_index(int ix, int iy, int iz) const {
    return (static_cast<int64_t>(iz) * R + iy) * R + ix;
  }
  Vec3d cell_center(int ix, int iy, int iz) const;
  Vec3d cell_size() const;
};

// Dense per-cell feature channels on the tape; rows follow VoxelGrid layout.
struct FeatureVolume {
  int R = 0;
  int C = 0;
  Box bounds;
  Tensor values;  // [R^3, C]
};

// One world point per nonzero-depth pixel. rgb may be empty (colorless cloud).
PointCloud unproject(std::span<const float> rgb, std::span<const float> depth,
                     const Camera& cam);
PointCloud crop(const PointCloud& pc, const Box& box);
// Greedy farthest-point sampling; the first pick is drawn from a stream
// seeded with `seed`. N <= k returns the input unchanged.
PointCloud farthest_point_sample(const PointCloud& pc, size_t k, uint64_t seed);
// Greedy core with a forced first pick; exposed for oracle tests.
std::vector<size_t> fps_greedy_from(const PointCloud& pc, size_t first, size_t k);
VoxelGrid voxelize(const PointCloud& pc, const Box& bounds, int R);

// Trilinear blend of the 8 cell-center features around x; out-of-bounds
// queries clamp to the boundary cell. Non-differentiable in x (queries are
// constants), differentiable in the volume values.
std::vector<float> trilinear_sample(const FeatureVolume& vol, const Vec3d& x);
// Batched tape op: [N,C] rows of trilinear samples with gradients into values.
Tensor trilinear_gather(const FeatureVolume& vol, const std::vector<Vec3d>& queries);

}  // namespace gswm
