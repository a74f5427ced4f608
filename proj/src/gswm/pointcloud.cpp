// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/pointcloud.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "gswm/rng.hpp"

namespace gswm {

void PointCloud::validate() const {
  if (xyz.size() % 3 != 0) throw DimensionError("point cloud xyz length not divisible by 3");
  if (!rgb.empty() && rgb.size() != xyz.size()) {
    throw DimensionError("point cloud color count differs from point count");
  }
  for (float v : xyz) {
    if (!std::isfinite(v)) throw NumericalError("non-finite point coordinate");
  }
}

void Box::validate() const {
  if (!(min.x < max.x && min.y < max.y && min.z < max.z)) {
    throw ContractError("box: min must be strictly below max per axis");
  }
}

Vec3d VoxelGrid::cell_size() const {
  return {(bounds.max.x - bounds.min.x) / R, (bounds.max.y - bounds.min.y) / R,
          (bounds.max.z - bounds.min.z) / R};
}

Vec3d VoxelGrid::cell_center(int ix, int iy, int iz) const {
  const Vec3d s = cell_size();
  return {bounds.min.x + (ix + 0.5) * s.x, bounds.min.y + (iy + 0.5) * s.y,
          bounds.min.z + (iz + 0.5) * s.z};
}

PointCloud unproject(std::span<const float> rgb, std::span<const float> depth,
                     const Camera& cam) {
  cam.validate();
  if (std::abs(std::abs(cam.rot.det()) - 1.0) > 1e-3) {
    throw ConfigError("unproject: camera rotation is not invertible");
  }
  const size_t n_px = static_cast<size_t>(cam.width) * cam.height;
  if (depth.size() != n_px) throw DimensionError("unproject: depth size mismatch");
  if (!rgb.empty() && rgb.size() != n_px * 3) {
    throw DimensionError("unproject: rgb size mismatch");
  }
  PointCloud pc;
  for (int iy = 0; iy < cam.height; ++iy) {
    for (int ix = 0; ix < cam.width; ++ix) {
      const size_t pix = static_cast<size_t>(iy) * cam.width + ix;
      const double d = depth[pix];
      if (d <= 0.0) continue;
      const Vec3d p_cam{(ix - cam.cx) / cam.fx * d, (iy - cam.cy) / cam.fy * d, d};
      const Vec3d p = cam.camera_to_world(p_cam);
      pc.xyz.push_back(static_cast<float>(p.x));
      pc.xyz.push_back(static_cast<float>(p.y));
      pc.xyz.push_back(static_cast<float>(p.z));
      if (!rgb.empty()) {
        pc.rgb.push_back(rgb[pix * 3]);
        pc.rgb.push_back(rgb[pix * 3 + 1]);
        pc.rgb.push_back(rgb[pix * 3 + 2]);
      }
    }
  }
  return pc;
}

PointCloud crop(const PointCloud& pc, const Box& box) {
  box.validate();
  PointCloud out;
  for (size_t i = 0; i < pc.size(); ++i) {
    if (!box.contains(pc.point(i))) continue;
    for (int a = 0; a < 3; ++a) out.xyz.push_back(pc.xyz[3 * i + a]);
    if (pc.has_color()) {
      for (int a = 0; a < 3; ++a) out.rgb.push_back(pc.rgb[3 * i + a]);
    }
  }
  return out;
}

std::vector<size_t> fps_greedy_from(const PointCloud& pc, size_t first, size_t k) {
  const size_t n = pc.size();
  if (first >= n) throw ContractError("fps: first pick out of range");
  std::vector<size_t> picked{first};
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  size_t last = first;
  while (picked.size() < k) {
    const Vec3d q = pc.point(last);
    size_t best = 0;
    double best_d2 = -1.0;
    for (size_t i = 0; i < n; ++i) {
      const Vec3d p = pc.point(i);
      const Vec3d d = p - q;
      min_d2[i] = std::min(min_d2[i], d.dot(d));
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
    last = best;
  }
  return picked;
}

PointCloud farthest_point_sample(const PointCloud& pc, size_t k, uint64_t seed) {
  if (k < 1) throw ContractError("fps: k must be >= 1");
  const size_t n = pc.size();
  if (n == 0) return {};
  if (n <= k) return pc;
  RngStream rng(seed);
  const size_t first = static_cast<size_t>(rng.uniform_int(n));
  const std::vector<size_t> idx = fps_greedy_from(pc, first, k);
  PointCloud out;
  for (size_t i : idx) {
    for (int a = 0; a < 3; ++a) out.xyz.push_back(pc.xyz[3 * i + a]);
    if (pc.has_color()) {
      for (int a = 0; a < 3; ++a) out.rgb.push_back(pc.rgb[3 * i + a]);
    }
  }
  return out;
}

VoxelGrid voxelize(const PointCloud& pc, const Box& bounds, int R) {
  bounds.validate();
  if (R < 2) throw ContractError("voxelize: resolution must be >= 2");
  VoxelGrid grid;
  grid.R = R;
  grid.bounds = bounds;
  const size_t cells = static_cast<size_t>(R) * R * R;
  grid.occupancy.assign(cells, 0.0f);
  grid.color.assign(cells * 3, 0.0f);
  grid.counts.assign(cells, 0);
  std::vector<double> csum(cells * 3, 0.0);
  const Vec3d ext = bounds.max - bounds.min;
  for (size_t i = 0; i < pc.size(); ++i) {
    const Vec3d p = pc.point(i);
    if (!bounds.contains(p)) continue;
    const int ix = std::min(static_cast<int>((p.x - bounds.min.x) / ext.x * R), R - 1);
    const int iy = std::min(static_cast<int>((p.y - bounds.min.y) / ext.y * R), R - 1);
    const int iz = std::min(static_cast<int>((p.z - bounds.min.z) / ext.z * R), R - 1);
    const int64_t c = grid.cell_index(ix, iy, iz);
    grid.occupancy[static_cast<size_t>(c)] = 1.0f;
    grid.counts[static_cast<size_t>(c)] += 1;
    if (pc.has_color()) {
      for (int a = 0; a < 3; ++a) csum[static_cast<size_t>(c) * 3 + a] += pc.rgb[3 * i + a];
    }
  }
  for (size_t c = 0; c < cells; ++c) {
    if (grid.counts[c] > 0 && pc.has_color()) {
      for (int a = 0; a < 3; ++a) {
        grid.color[c * 3 + a] = static_cast<float>(csum[c * 3 + a] / grid.counts[c]);
      }
    }
  }
  return grid;
}

namespace {

struct TriCorner {
  int64_t cell;
  double w;
};

// The 8 cell-center corners and weights for a query; clamped at boundaries.
std::array<TriCorner, 8> trilinear_corners(const Box& bounds, int R, const Vec3d& x) {
  const Vec3d ext = bounds.max - bounds.min;
  const double ux = (x.x - bounds.min.x) / ext.x * R - 0.5;
  const double uy = (x.y - bounds.min.y) / ext.y * R - 0.5;
  const double uz = (x.z - bounds.min.z) / ext.z * R - 0.5;
  auto split = [R](double u, int& i0, int& i1, double& t) {
    const double f = std::floor(u);
    i0 = static_cast<int>(f);
    t = u - f;
    i1 = i0 + 1;
    if (i0 < 0) { i0 = 0; i1 = 0; t = 0.0; }
    if (i1 > R - 1) { i1 = R - 1; if (i0 > R - 1) { i0 = R - 1; t = 0.0; } }
    if (i0 == i1) t = 0.0;
  };
  int x0, x1, y0, y1, z0, z1;
  double tx, ty, tz;
  split(ux, x0, x1, tx);
  split(uy, y0, y1, ty);
  split(uz, z0, z1, tz);
  auto idx = [R](int ix, int iy, int iz) {
    return (static_cast<int64_t>(iz) * R + iy) * R + ix;
  };
  std::array<TriCorner, 8> out;
  int n = 0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        out[static_cast<size_t>(n++)] = {idx(dx ? x1 : x0, dy ? y1 : y0, dz ? z1 : z0), w};
      }
    }
  }
  return out;
}

}  // namespace

std::vector<float> trilinear_sample(const FeatureVolume& vol, const Vec3d& x) {
  const auto corners = trilinear_corners(vol.bounds, vol.R, x);
  std::vector<float> out(static_cast<size_t>(vol.C), 0.0f);
  const auto v = vol.values.data();
  for (int c = 0; c < vol.C; ++c) {
    double acc = 0.0;
    for (const TriCorner& tc : corners) {
      acc += tc.w * v[static_cast<size_t>(tc.cell) * vol.C + c];
    }
    out[static_cast<size_t>(c)] = static_cast<float>(acc);
  }
  return out;
}

Tensor trilinear_gather(const FeatureVolume& vol, const std::vector<Vec3d>& queries) {
  const int N = static_cast<int>(queries.size());
  const int C = vol.C;
  if (vol.values.dim(0) != vol.R * vol.R * vol.R || vol.values.dim(1) != C) {
    throw DimensionError("trilinear_gather: volume tensor shape mismatch");
  }
  auto node = make_node("trilinear_gather", {N, C}, {vol.values});
  std::vector<std::array<TriCorner, 8>> all(static_cast<size_t>(N));
  const auto v = vol.values.data();
  for (int n = 0; n < N; ++n) {
    all[static_cast<size_t>(n)] = trilinear_corners(vol.bounds, vol.R, queries[static_cast<size_t>(n)]);
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (const TriCorner& tc : all[static_cast<size_t>(n)]) {
        acc += tc.w * v[static_cast<size_t>(tc.cell) * C + c];
      }
      node->value[static_cast<size_t>(n) * C + c] = static_cast<float>(acc);
    }
  }
  finalize_node(node);
  node->backward_fn = [N, C, all](Node& self) {
    auto& parent = self.parents[0];
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    if (parent->frozen) return;
    float* dv = parent->grad.data();
    for (int n = 0; n < N; ++n) {
      for (const TriCorner& tc : all[static_cast<size_t>(n)]) {
        for (int c = 0; c < C; ++c) {
          dv[static_cast<size_t>(tc.cell) * C + c] +=
              static_cast<float>(tc.w * self.grad[static_cast<size_t>(n) * C + c]);
        }
      }
    }
  };
  return Tensor(node);
}

}  // namespace gswm
