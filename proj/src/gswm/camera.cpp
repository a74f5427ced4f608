// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/camera.hpp"

#include <cmath>

namespace gswm {

double Vec3d::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3d Vec3d::normalized() const {
  const double n = norm();
  if (n == 0.0) throw NumericalError("normalizing a zero vector");
  return {x / n, y / n, z / n};
}

Mat3 Mat3::identity() {
  Mat3 r;
  r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  return r;
}

Vec3d Mat3::operator*(const Vec3d& v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
      r.m[i * 3 + j] = acc;
    }
  }
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.m[j * 3 + i] = m[i * 3 + j];
  }
  return r;
}

double Mat3::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void Camera::validate() const {
  if (fx <= 0.0 || fy <= 0.0) throw ContractError("camera: fx and fy must be positive");
  if (!(0.0 < near_clip && near_clip < far_clip)) {
    throw ContractError("camera: requires 0 < near < far");
  }
  if (width <= 0 || height <= 0) throw ContractError("camera: empty image plane");
}

Camera Camera::look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up,
                       double vertical_fov_deg, int width, int height, double near_clip,
                       double far_clip) {
  Camera cam;
  const Vec3d fwd = (target - eye).normalized();
  const Vec3d right = fwd.cross(up).normalized();
  const Vec3d down = fwd.cross(right);
  // Rows of R are the camera axes expressed in world coordinates.
  cam.rot.m = {right.x, right.y, right.z, down.x, down.y, down.z, fwd.x, fwd.y, fwd.z};
  const Vec3d re = cam.rot * eye;
  cam.trans = {-re.x, -re.y, -re.z};
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * height / std::tan(0.5 * vertical_fov_deg * M_PI / 180.0);
  cam.fx = f;
  cam.fy = f;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.near_clip = near_clip;
  cam.far_clip = far_clip;
  cam.validate();
  return cam;
}

}  // namespace gswm
