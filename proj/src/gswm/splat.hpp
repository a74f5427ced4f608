// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "gswm/camera.hpp"
#include "gswm/tensor.hpp"

namespace gswm {

// One renderable scene atom. Packed tensor rows follow the same field order:
// position(3), color(3), rotation(4), scale(3), opacity(1) = 14 floats.
struct GaussianPrimitive {
  Vec3d mu;
  std::array<float, 3> color{0.0f, 0.0f, 0.0f};
  std::array<double, 4> rot{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z)
  Vec3d scale{1.0, 1.0, 1.0};
  double opacity = 1.0;

  void validate() const;
};

constexpr int kGaussianParamDim = 14;

struct RenderedFrame {
  int width = 0;
  int height = 0;
  std::vector<float> color;  // [H*W*3], [0,1]
  std::vector<float> depth;  // [H*W], meters
  std::vector<float> alpha;  // [H*W], [0,1]
};

struct RenderOptions {
  bool use_tiles = true;
  // Skip contributions outside three standard deviations in 2D. Equivalence
  // and gradient tests disable this to keep the compositing math smooth.
  bool sigma_cutoff = true;
};

constexpr int kTileSize = 16;

// Sigma = R * diag(scale^2) * R^T for a unit quaternion (w, x, y, z).
Mat3 covariance3d(const std::array<double, 4>& rot, const Vec3d& scale);

// Pinhole projection of one primitive; culled when camera-frame z <= near.
struct ProjectedGaussian {
  bool culled = true;
  double mu2d[2] = {0.0, 0.0};
  double cov2d[4] = {0.0, 0.0, 0.0, 0.0};  // row-major 2x2, includes +1e-6 I
  double depth = 0.0;
};
ProjectedGaussian project_gaussian(const GaussianPrimitive& g, const Camera& cam);

Tensor pack_gaussians(const std::vector<GaussianPrimitive>& gs);
std::vector<GaussianPrimitive> unpack_gaussians(const Tensor& params);

// Alpha-blend rasterization of packed primitives [N,14]. Output rows are
// pixels in row-major order with columns (r, g, b, depth, alpha); gradients
// reach every primitive field, including the projection Jacobian's
// dependence on position.
Tensor render_gaussians(const Tensor& params, const Camera& cam,
                        const RenderOptions& opts = {});

RenderedFrame render(const std::vector<GaussianPrimitive>& gs, const Camera& cam,
                     const RenderOptions& opts = {});

// Scalar reconstruction loss: sum over pixels of squared RGB error plus
// depth_weight times squared depth error, accumulated in double. Either
// term can be switched off; both off yields an exact zero with no gradient.
Tensor render_rgbd_loss(const Tensor& params, const Camera& cam, const RenderedFrame& target,
                        double depth_weight, bool use_rgb, bool use_depth,
                        const RenderOptions& opts = {});

// Same loss on additively updated primitives: the scene rendered is
// params + delta (both [N,14]), with the sum taken in double before
// projection. Gradients flow to params and delta alike.
Tensor render_rgbd_loss(const Tensor& params, const Tensor& delta, const Camera& cam,
                        const RenderedFrame& target, double depth_weight, bool use_rgb,
                        bool use_depth, const RenderOptions& opts = {});

}  // namespace gswm
