// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "gswm/errors.hpp"

namespace gswm {

struct Vec3d {
  double x = 0.0, y = 0.0, z = 0.0;
  Vec3d operator+(const Vec3d& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3d operator-(const Vec3d& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3d operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3d& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3d cross(const Vec3d& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const;
  Vec3d normalized() const;
};

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{};
  static Mat3 identity();
  Vec3d operator*(const Vec3d& v) const;
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double det() const;
};

// Pinhole camera. Extrinsics map world to camera: x_cam = R x_world + t,
// camera looks down +z, x right, y down (image row = y).
struct Camera {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  double near_clip = 0.0, far_clip = 0.0;
  Mat3 rot = Mat3::identity();
  Vec3d trans;

  void validate() const;
  Vec3d world_to_camera(const Vec3d& p) const { return rot * p + trans; }
  Vec3d camera_to_world(const Vec3d& p) const { return rot.transposed() * (p - trans); }
  // Camera placed at eye, +z toward target, y aligned against world up.
  static Camera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up,
                        double vertical_fov_deg, int width, int height, double near_clip,
                        double far_clip);
};

}  // namespace gswm
