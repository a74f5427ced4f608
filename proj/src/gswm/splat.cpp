// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/splat.hpp"

#include <algorithm>
#include <cmath>

namespace gswm {

namespace {

constexpr double kAlphaClamp = 0.999;
constexpr double kCovEps = 1e-6;
constexpr double kCutoffQ = 9.0;  // three standard deviations, squared

// Per-primitive projection state, all double precision.
struct Prep {
  bool culled = true;
  double mu2d[2] = {0, 0};
  double cov[4] = {0, 0, 0, 0};   // 2x2 row-major
  double minv[4] = {0, 0, 0, 0};  // inverse of cov
  double depth = 0;
  double color[3] = {0, 0, 0};
  double opacity = 0;
  double pcam[3] = {0, 0, 0};
  double sigc[9] = {0};  // camera-frame 3x3 covariance
  double rotm[9] = {0};  // primitive rotation matrix
  double qn[4] = {1, 0, 0, 0};
  double qnorm = 1;
  double s[3] = {0, 0, 0};
  double rx = 0, ry = 0;  // conservative pixel half-extents at cutoff
};

void quat_to_rot(const double q[4], double r[9]) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  r[0] = 1 - 2 * (y * y + z * z);
  r[1] = 2 * (x * y - w * z);
  r[2] = 2 * (x * z + w * y);
  r[3] = 2 * (x * y + w * z);
  r[4] = 1 - 2 * (x * x + z * z);
  r[5] = 2 * (y * z - w * x);
  r[6] = 2 * (x * z - w * y);
  r[7] = 2 * (y * z + w * x);
  r[8] = 1 - 2 * (x * x + y * y);
}

template <typename T>
std::vector<Prep> prepare(const T* p, int n, const Camera& cam) {
  const double W[9] = {cam.rot.m[0], cam.rot.m[1], cam.rot.m[2], cam.rot.m[3], cam.rot.m[4],
                       cam.rot.m[5], cam.rot.m[6], cam.rot.m[7], cam.rot.m[8]};
  std::vector<Prep> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = p + static_cast<size_t>(i) * kGaussianParamDim;
    Prep& g = out[static_cast<size_t>(i)];
    const double mu[3] = {row[0], row[1], row[2]};
    for (int a = 0; a < 3; ++a) g.color[a] = row[3 + a];
    double q[4] = {row[6], row[7], row[8], row[9]};
    for (int a = 0; a < 3; ++a) g.s[a] = row[10 + a];
    g.opacity = row[13];

    g.qnorm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (g.qnorm < 1e-8) throw NumericalError("render: zero-norm quaternion");
    for (int a = 0; a < 4; ++a) g.qn[a] = q[a] / g.qnorm;
    quat_to_rot(g.qn, g.rotm);

    for (int a = 0; a < 3; ++a) {
      g.pcam[a] = W[a * 3] * mu[0] + W[a * 3 + 1] * mu[1] + W[a * 3 + 2] * mu[2];
    }
    g.pcam[0] += cam.trans.x;
    g.pcam[1] += cam.trans.y;
    g.pcam[2] += cam.trans.z;
    if (g.pcam[2] <= cam.near_clip) continue;
    g.culled = false;
    g.depth = g.pcam[2];

    double sig3[9];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) {
          acc += g.s[k] * g.s[k] * g.rotm[a * 3 + k] * g.rotm[b * 3 + k];
        }
        sig3[a * 3 + b] = acc;
      }
    }
    double ws[9];  // W * sig3
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += W[a * 3 + k] * sig3[k * 3 + b];
        ws[a * 3 + b] = acc;
      }
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += ws[a * 3 + k] * W[b * 3 + k];
        g.sigc[a * 3 + b] = acc;
      }
    }

    const double x = g.pcam[0], y = g.pcam[1], z = g.pcam[2];
    g.mu2d[0] = cam.fx * x / z + cam.cx;
    g.mu2d[1] = cam.fy * y / z + cam.cy;
    const double J[6] = {cam.fx / z, 0, -cam.fx * x / (z * z),
                         0, cam.fy / z, -cam.fy * y / (z * z)};
    double js[6];  // J * sigc, 2x3
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += J[a * 3 + k] * g.sigc[k * 3 + b];
        js[a * 3 + b] = acc;
      }
    }
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += js[a * 3 + k] * J[b * 3 + k];
        g.cov[a * 2 + b] = acc;
      }
    }
    g.cov[0] += kCovEps;
    g.cov[3] += kCovEps;
    const double det = g.cov[0] * g.cov[3] - g.cov[1] * g.cov[2];
    g.minv[0] = g.cov[3] / det;
    g.minv[1] = -g.cov[1] / det;
    g.minv[2] = -g.cov[2] / det;
    g.minv[3] = g.cov[0] / det;
    g.rx = 3.0 * std::sqrt(g.cov[0]);
    g.ry = 3.0 * std::sqrt(g.cov[3]);
  }
  return out;
}

std::vector<int> sorted_order(const std::vector<Prep>& gs) {
  std::vector<int> order;
  order.reserve(gs.size());
  for (int i = 0; i < static_cast<int>(gs.size()); ++i) {
    if (!gs[static_cast<size_t>(i)].culled) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&gs](int a, int b) {
    const double da = gs[static_cast<size_t>(a)].depth, db = gs[static_cast<size_t>(b)].depth;
    if (da != db) return da < db;
    return a < b;
  });
  return order;
}

void composite_pixel(double px, double py, const int* list, int m, const Prep* gs, bool cutoff,
                     double* out5) {
  double T = 1.0, c0 = 0, c1 = 0, c2 = 0, d = 0, A = 0;
  for (int k = 0; k < m; ++k) {
    const Prep& g = gs[list[k]];
    const double dx = px - g.mu2d[0];
    const double dy = py - g.mu2d[1];
    const double q = g.minv[0] * dx * dx + (g.minv[1] + g.minv[2]) * dx * dy +
                     g.minv[3] * dy * dy;
    if (cutoff && q > kCutoffQ) continue;
    const double raw = g.opacity * std::exp(-0.5 * q);
    if (raw <= 0.0) continue;
    const double a = raw < kAlphaClamp ? raw : kAlphaClamp;
    const double w = a * T;
    c0 += w * g.color[0];
    c1 += w * g.color[1];
    c2 += w * g.color[2];
    d += w * g.depth;
    A += w;
    T *= 1.0 - a;
  }
  out5[0] = c0;
  out5[1] = c1;
  out5[2] = c2;
  out5[3] = d;
  out5[4] = A;
}

std::vector<double> forward_buffers(const std::vector<Prep>& gs, const std::vector<int>& order,
                                    const Camera& cam, const RenderOptions& opts) {
  const int W = cam.width, H = cam.height;
  std::vector<double> out(static_cast<size_t>(W) * H * 5, 0.0);
  if (opts.use_tiles) {
    std::vector<int> list;
    for (int y0 = 0; y0 < H; y0 += kTileSize) {
      const int y1 = std::min(y0 + kTileSize, H);
      for (int x0 = 0; x0 < W; x0 += kTileSize) {
        const int x1 = std::min(x0 + kTileSize, W);
        list.clear();
        for (int gi : order) {
          const Prep& g = gs[static_cast<size_t>(gi)];
          if (opts.sigma_cutoff) {
            if (g.mu2d[0] + g.rx < x0 || g.mu2d[0] - g.rx > x1 - 1 ||
                g.mu2d[1] + g.ry < y0 || g.mu2d[1] - g.ry > y1 - 1) {
              continue;
            }
          }
          list.push_back(gi);
        }
        for (int py = y0; py < y1; ++py) {
          for (int px = x0; px < x1; ++px) {
            composite_pixel(px, py, list.data(), static_cast<int>(list.size()), gs.data(),
                            opts.sigma_cutoff, &out[(static_cast<size_t>(py) * W + px) * 5]);
          }
        }
      }
    }
  } else {
    for (int py = 0; py < H; ++py) {
      for (int px = 0; px < W; ++px) {
        composite_pixel(px, py, order.data(), static_cast<int>(order.size()), gs.data(),
                        opts.sigma_cutoff, &out[(static_cast<size_t>(py) * W + px) * 5]);
      }
    }
  }
  return out;
}

// Reverse-mode pass: per pixel, recompute the compositing sweep, then walk
// it back to front accumulating d(loss)/d(alpha_i); afterwards chain each
// primitive's 2D accumulators through projection, covariance and quaternion
// normalization. grad5 is [H*W*5]; dparams is [n*14], both double.
void backward_params(const std::vector<Prep>& gs, const std::vector<int>& order,
                     const Camera& cam, const RenderOptions& opts, const double* grad5,
                     double* dparams) {
  const int n = static_cast<int>(gs.size());
  std::vector<double> gmu2d(static_cast<size_t>(n) * 2, 0.0);
  std::vector<double> gsig(static_cast<size_t>(n) * 4, 0.0);
  std::vector<double> gcol(static_cast<size_t>(n) * 3, 0.0);
  std::vector<double> gdep(static_cast<size_t>(n), 0.0);
  std::vector<double> gopa(static_cast<size_t>(n), 0.0);

  struct Contrib {
    int gi;
    double a, raw, e, t, dx, dy;
  };
  std::vector<Contrib> cs;
  cs.reserve(order.size());

  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      const double* gout = &grad5[(static_cast<size_t>(py) * cam.width + px) * 5];
      if (gout[0] == 0 && gout[1] == 0 && gout[2] == 0 && gout[3] == 0 && gout[4] == 0) {
        continue;
      }
      cs.clear();
      double T = 1.0;
      for (int gi : order) {
        const Prep& g = gs[static_cast<size_t>(gi)];
        const double dx = px - g.mu2d[0];
        const double dy = py - g.mu2d[1];
        const double q = g.minv[0] * dx * dx + (g.minv[1] + g.minv[2]) * dx * dy +
                         g.minv[3] * dy * dy;
        if (opts.sigma_cutoff && q > kCutoffQ) continue;
        const double e = std::exp(-0.5 * q);
        const double raw = g.opacity * e;
        if (raw <= 0.0) continue;
        const double a = raw < kAlphaClamp ? raw : kAlphaClamp;
        cs.push_back({gi, a, raw, e, T, dx, dy});
        T *= 1.0 - a;
      }
      double suffix = 0.0;
      for (size_t k = cs.size(); k-- > 0;) {
        const Contrib& c = cs[k];
        const Prep& g = gs[static_cast<size_t>(c.gi)];
        const double phi = gout[0] * g.color[0] + gout[1] * g.color[1] + gout[2] * g.color[2] +
                           gout[3] * g.depth + gout[4];
        const double w = c.a * c.t;
        for (int a = 0; a < 3; ++a) gcol[static_cast<size_t>(c.gi) * 3 + a] += w * gout[a];
        gdep[static_cast<size_t>(c.gi)] += w * gout[3];
        const double dalpha = c.t * phi - suffix / (1.0 - c.a);
        suffix += w * phi;
        if (c.raw > kAlphaClamp) continue;
        gopa[static_cast<size_t>(c.gi)] += dalpha * c.e;
        const double gq = -0.5 * dalpha * c.raw;
        const double mx = g.minv[0] * c.dx + g.minv[1] * c.dy;
        const double my = g.minv[2] * c.dx + g.minv[3] * c.dy;
        gmu2d[static_cast<size_t>(c.gi) * 2] += -2.0 * gq * mx;
        gmu2d[static_cast<size_t>(c.gi) * 2 + 1] += -2.0 * gq * my;
        gsig[static_cast<size_t>(c.gi) * 4] += -gq * mx * mx;
        gsig[static_cast<size_t>(c.gi) * 4 + 1] += -gq * mx * my;
        gsig[static_cast<size_t>(c.gi) * 4 + 2] += -gq * my * mx;
        gsig[static_cast<size_t>(c.gi) * 4 + 3] += -gq * my * my;
      }
    }
  }

  const double W[9] = {cam.rot.m[0], cam.rot.m[1], cam.rot.m[2], cam.rot.m[3], cam.rot.m[4],
                       cam.rot.m[5], cam.rot.m[6], cam.rot.m[7], cam.rot.m[8]};
  for (int i = 0; i < n; ++i) {
    const Prep& g = gs[static_cast<size_t>(i)];
    if (g.culled) continue;
    double* drow = dparams + static_cast<size_t>(i) * kGaussianParamDim;
    for (int a = 0; a < 3; ++a) drow[3 + a] += gcol[static_cast<size_t>(i) * 3 + a];
    drow[13] += gopa[static_cast<size_t>(i)];

    const double x = g.pcam[0], y = g.pcam[1], z = g.pcam[2];
    const double J[6] = {cam.fx / z, 0, -cam.fx * x / (z * z),
                         0, cam.fy / z, -cam.fy * y / (z * z)};
    const double* G2 = &gsig[static_cast<size_t>(i) * 4];

    double jt_g2[6];  // J^T * G2, 3x2
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 2; ++b) {
        jt_g2[a * 2 + b] = J[a] * G2[b] + J[3 + a] * G2[2 + b];
      }
    }
    double dsigc[9];  // (J^T G2) J
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        dsigc[a * 3 + b] = jt_g2[a * 2] * J[b] + jt_g2[a * 2 + 1] * J[3 + b];
      }
    }
    double jsc[6];  // J * sigc, 2x3
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += J[a * 3 + k] * g.sigc[k * 3 + b];
        jsc[a * 3 + b] = acc;
      }
    }
    double dJ[6];  // (G2 + G2^T) * (J sigc)
    for (int a = 0; a < 2; ++a) {
      const double ga0 = G2[a * 2] + G2[a];
      const double ga1 = G2[a * 2 + 1] + G2[2 + a];
      for (int b = 0; b < 3; ++b) {
        dJ[a * 3 + b] = ga0 * jsc[b] + ga1 * jsc[3 + b];
      }
    }

    const double gmx = gmu2d[static_cast<size_t>(i) * 2];
    const double gmy = gmu2d[static_cast<size_t>(i) * 2 + 1];
    double dp[3] = {0, 0, 0};
    dp[0] += dJ[2] * (-cam.fx / (z * z));
    dp[1] += dJ[5] * (-cam.fy / (z * z));
    dp[2] += dJ[0] * (-cam.fx / (z * z)) + dJ[4] * (-cam.fy / (z * z)) +
             dJ[2] * (2.0 * cam.fx * x / (z * z * z)) + dJ[5] * (2.0 * cam.fy * y / (z * z * z));
    dp[0] += gmx * cam.fx / z;
    dp[1] += gmy * cam.fy / z;
    dp[2] += gmx * (-cam.fx * x / (z * z)) + gmy * (-cam.fy * y / (z * z));
    dp[2] += gdep[static_cast<size_t>(i)];

    for (int a = 0; a < 3; ++a) {
      drow[a] += W[a] * dp[0] + W[3 + a] * dp[1] + W[6 + a] * dp[2];
    }

    double dsig3[9];  // W^T dsigc W
    double tmp[9];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += W[k * 3 + a] * dsigc[k * 3 + b];
        tmp[a * 3 + b] = acc;
      }
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += tmp[a * 3 + k] * W[k * 3 + b];
        dsig3[a * 3 + b] = acc;
      }
    }

    for (int k = 0; k < 3; ++k) {
      double t = 0;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          t += g.rotm[a * 3 + k] * dsig3[a * 3 + b] * g.rotm[b * 3 + k];
        }
      }
      drow[10 + k] += 2.0 * g.s[k] * t;
    }

    double rd[9];  // R * diag(s^2)
    for (int a = 0; a < 3; ++a) {
      for (int k = 0; k < 3; ++k) rd[a * 3 + k] = g.rotm[a * 3 + k] * g.s[k] * g.s[k];
    }
    double dR[9];  // (G3 + G3^T) * R D
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += (dsig3[a * 3 + k] + dsig3[k * 3 + a]) * rd[k * 3 + b];
        dR[a * 3 + b] = acc;
      }
    }

    const double qw = g.qn[0], qx = g.qn[1], qy = g.qn[2], qz = g.qn[3];
    const double dRdq[4][9] = {
        {0, -qz, qy, qz, 0, -qx, -qy, qx, 0},
        {0, qy, qz, qy, -2 * qx, -qw, qz, qw, -2 * qx},
        {-2 * qy, qx, qw, qx, 0, qz, -qw, qz, -2 * qy},
        {-2 * qz, -qw, qx, qw, -2 * qz, qy, qx, qy, 0},
    };
    double dqn[4];
    for (int c = 0; c < 4; ++c) {
      double acc = 0;
      for (int e = 0; e < 9; ++e) acc += dR[e] * 2.0 * dRdq[c][e];
      dqn[c] = acc;
    }
    const double dot = dqn[0] * qw + dqn[1] * qx + dqn[2] * qy + dqn[3] * qz;
    drow[6] += (dqn[0] - qw * dot) / g.qnorm;
    drow[7] += (dqn[1] - qx * dot) / g.qnorm;
    drow[8] += (dqn[2] - qy * dot) / g.qnorm;
    drow[9] += (dqn[3] - qz * dot) / g.qnorm;
  }
}

void check_params_shape(const Tensor& params) {
  if (params.ndim() != 2 || params.dim(1) != kGaussianParamDim) {
    throw DimensionError("render: params must be [N,14]");
  }
}

}  // namespace

void GaussianPrimitive::validate() const {
  const double qn = std::sqrt(rot[0] * rot[0] + rot[1] * rot[1] + rot[2] * rot[2] +
                              rot[3] * rot[3]);
  if (std::abs(qn - 1.0) > 1e-6) throw ContractError("gaussian: quaternion must be unit norm");
  if (!(scale.x > 0 && scale.y > 0 && scale.z > 0)) {
    throw ContractError("gaussian: scale must be positive");
  }
  if (opacity < 0.0 || opacity > 1.0) throw ContractError("gaussian: opacity outside [0,1]");
  for (float c : color) {
    if (c < 0.0f || c > 1.0f) throw ContractError("gaussian: color outside [0,1]");
  }
}

Mat3 covariance3d(const std::array<double, 4>& rot, const Vec3d& scale) {
  const double qn = std::sqrt(rot[0] * rot[0] + rot[1] * rot[1] + rot[2] * rot[2] +
                              rot[3] * rot[3]);
  if (std::abs(qn - 1.0) > 1e-6) throw ContractError("covariance3d: quaternion must be unit norm");
  if (!(scale.x > 0 && scale.y > 0 && scale.z > 0)) {
    throw ContractError("covariance3d: scale must be positive");
  }
  const double q[4] = {rot[0] / qn, rot[1] / qn, rot[2] / qn, rot[3] / qn};
  double r[9];
  quat_to_rot(q, r);
  const double s2[3] = {scale.x * scale.x, scale.y * scale.y, scale.z * scale.z};
  Mat3 out;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += s2[k] * r[a * 3 + k] * r[b * 3 + k];
      out.m[static_cast<size_t>(a * 3 + b)] = acc;
    }
  }
  return out;
}

ProjectedGaussian project_gaussian(const GaussianPrimitive& g, const Camera& cam) {
  cam.validate();
  const Tensor packed = pack_gaussians({g});
  const std::vector<Prep> prep = prepare(packed.data().data(), 1, cam);
  ProjectedGaussian out;
  out.culled = prep[0].culled;
  if (out.culled) return out;
  out.mu2d[0] = prep[0].mu2d[0];
  out.mu2d[1] = prep[0].mu2d[1];
  for (int i = 0; i < 4; ++i) out.cov2d[i] = prep[0].cov[i];
  out.depth = prep[0].depth;
  return out;
}

Tensor pack_gaussians(const std::vector<GaussianPrimitive>& gs) {
  std::vector<float> data;
  data.reserve(gs.size() * kGaussianParamDim);
  for (const GaussianPrimitive& g : gs) {
    data.push_back(static_cast<float>(g.mu.x));
    data.push_back(static_cast<float>(g.mu.y));
    data.push_back(static_cast<float>(g.mu.z));
    for (float c : g.color) data.push_back(c);
    for (double q : g.rot) data.push_back(static_cast<float>(q));
    data.push_back(static_cast<float>(g.scale.x));
    data.push_back(static_cast<float>(g.scale.y));
    data.push_back(static_cast<float>(g.scale.z));
    data.push_back(static_cast<float>(g.opacity));
  }
  return Tensor::of({static_cast<int>(gs.size()), kGaussianParamDim}, std::move(data));
}

std::vector<GaussianPrimitive> unpack_gaussians(const Tensor& params) {
  check_params_shape(params);
  const auto d = params.data();
  std::vector<GaussianPrimitive> out(static_cast<size_t>(params.dim(0)));
  for (size_t i = 0; i < out.size(); ++i) {
    const float* row = d.data() + i * kGaussianParamDim;
    GaussianPrimitive& g = out[i];
    g.mu = {row[0], row[1], row[2]};
    g.color = {row[3], row[4], row[5]};
    g.rot = {row[6], row[7], row[8], row[9]};
    g.scale = {row[10], row[11], row[12]};
    g.opacity = row[13];
  }
  return out;
}

Tensor render_gaussians(const Tensor& params, const Camera& cam, const RenderOptions& opts) {
  check_params_shape(params);
  cam.validate();
  const int n = params.dim(0);
  const std::vector<Prep> prep = prepare(params.data().data(), n, cam);
  const std::vector<int> order = sorted_order(prep);
  const std::vector<double> buf = forward_buffers(prep, order, cam, opts);

  auto node = make_node("render_gaussians", {cam.width * cam.height, 5}, {params});
  for (size_t i = 0; i < buf.size(); ++i) node->value[i] = static_cast<float>(buf[i]);
  finalize_node(node);
  node->backward_fn = [cam, opts, n](Node& self) {
    auto& parent = self.parents[0];
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    if (parent->frozen) return;
    const std::vector<Prep> prep2 = prepare(parent->value.data(), n, cam);
    const std::vector<int> order2 = sorted_order(prep2);
    std::vector<double> g5(self.grad.size());
    for (size_t i = 0; i < g5.size(); ++i) g5[i] = self.grad[i];
    std::vector<double> dparams(static_cast<size_t>(n) * kGaussianParamDim, 0.0);
    backward_params(prep2, order2, cam, opts, g5.data(), dparams.data());
    for (size_t i = 0; i < dparams.size(); ++i) {
      parent->grad[i] += static_cast<float>(dparams[i]);
    }
  };
  return Tensor(node);
}

RenderedFrame render(const std::vector<GaussianPrimitive>& gs, const Camera& cam,
                     const RenderOptions& opts) {
  cam.validate();
  const Tensor packed = pack_gaussians(gs);
  const std::vector<Prep> prep =
      prepare(packed.data().data(), static_cast<int>(gs.size()), cam);
  const std::vector<int> order = sorted_order(prep);
  const std::vector<double> buf = forward_buffers(prep, order, cam, opts);
  RenderedFrame frame;
  frame.width = cam.width;
  frame.height = cam.height;
  const size_t n_px = static_cast<size_t>(cam.width) * cam.height;
  frame.color.resize(n_px * 3);
  frame.depth.resize(n_px);
  frame.alpha.resize(n_px);
  for (size_t p = 0; p < n_px; ++p) {
    frame.color[p * 3] = static_cast<float>(buf[p * 5]);
    frame.color[p * 3 + 1] = static_cast<float>(buf[p * 5 + 1]);
    frame.color[p * 3 + 2] = static_cast<float>(buf[p * 5 + 2]);
    frame.depth[p] = static_cast<float>(buf[p * 5 + 3]);
    frame.alpha[p] = static_cast<float>(buf[p * 5 + 4]);
  }
  return frame;
}

namespace {

void check_loss_target(const Camera& cam, const RenderedFrame& target) {
  const size_t n_px = static_cast<size_t>(cam.width) * cam.height;
  if (target.width != cam.width || target.height != cam.height ||
      target.color.size() != n_px * 3 || target.depth.size() != n_px) {
    throw DimensionError("render_rgbd_loss: target does not match camera image size");
  }
}

double rgbd_loss_sum(const std::vector<double>& buf, const RenderedFrame& target,
                     double depth_weight, bool use_rgb, bool use_depth) {
  const size_t n_px = target.depth.size();
  double loss = 0.0;
  for (size_t p = 0; p < n_px; ++p) {
    if (use_rgb) {
      for (size_t a = 0; a < 3; ++a) {
        const double r = buf[p * 5 + a] - target.color[p * 3 + a];
        loss += r * r;
      }
    }
    if (use_depth) {
      const double r = buf[p * 5 + 3] - target.depth[p];
      loss += depth_weight * r * r;
    }
  }
  return loss;
}

std::vector<double> rgbd_loss_grad5(const std::vector<double>& buf, const RenderedFrame& target,
                                    double gs, double depth_weight, bool use_rgb, bool use_depth) {
  const size_t n_px = target.depth.size();
  std::vector<double> g5(n_px * 5, 0.0);
  for (size_t p = 0; p < n_px; ++p) {
    if (use_rgb) {
      for (size_t a = 0; a < 3; ++a) {
        g5[p * 5 + a] = gs * 2.0 * (buf[p * 5 + a] - target.color[p * 3 + a]);
      }
    }
    if (use_depth) {
      g5[p * 5 + 3] = gs * depth_weight * 2.0 * (buf[p * 5 + 3] - target.depth[p]);
    }
  }
  return g5;
}

}  // namespace

Tensor render_rgbd_loss(const Tensor& params, const Camera& cam, const RenderedFrame& target,
                        double depth_weight, bool use_rgb, bool use_depth,
                        const RenderOptions& opts) {
  check_params_shape(params);
  cam.validate();
  if (!use_rgb && !use_depth) return Tensor::scalar(0.0);
  check_loss_target(cam, target);
  const int n = params.dim(0);
  const std::vector<Prep> prep = prepare(params.data().data(), n, cam);
  const std::vector<int> order = sorted_order(prep);
  const std::vector<double> buf = forward_buffers(prep, order, cam, opts);
  const double loss = rgbd_loss_sum(buf, target, depth_weight, use_rgb, use_depth);

  auto node = make_node("render_rgbd_loss", {1}, {params});
  node->value[0] = static_cast<float>(loss);
  node->scalar64 = loss;
  node->has_scalar64 = true;
  finalize_node(node);
  node->backward_fn = [cam, opts, n, target, depth_weight, use_rgb, use_depth](Node& self) {
    auto& parent = self.parents[0];
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    if (parent->frozen) return;
    const std::vector<Prep> prep2 = prepare(parent->value.data(), n, cam);
    const std::vector<int> order2 = sorted_order(prep2);
    const std::vector<double> buf2 = forward_buffers(prep2, order2, cam, opts);
    const std::vector<double> g5 =
        rgbd_loss_grad5(buf2, target, self.grad[0], depth_weight, use_rgb, use_depth);
    std::vector<double> dparams(static_cast<size_t>(n) * kGaussianParamDim, 0.0);
    backward_params(prep2, order2, cam, opts, g5.data(), dparams.data());
    for (size_t i = 0; i < dparams.size(); ++i) {
      parent->grad[i] += static_cast<float>(dparams[i]);
    }
  };
  return Tensor(node);
}

Tensor render_rgbd_loss(const Tensor& params, const Tensor& delta, const Camera& cam,
                        const RenderedFrame& target, double depth_weight, bool use_rgb,
                        bool use_depth, const RenderOptions& opts) {
  check_params_shape(params);
  if (delta.ndim() != 2 || delta.dim(0) != params.dim(0) ||
      delta.dim(1) != kGaussianParamDim) {
    throw DimensionError("render_rgbd_loss: delta must match params shape");
  }
  cam.validate();
  if (!use_rgb && !use_depth) return Tensor::scalar(0.0);
  check_loss_target(cam, target);
  const int n = params.dim(0);

  // params + delta is formed in double, where the sum of two floats is exact;
  // quantizing the updated parameters back to float would put a noise floor
  // above what finite-difference checks through this loss can tolerate.
  auto effective = [n](const float* pv, const float* dv) {
    std::vector<double> eff(static_cast<size_t>(n) * kGaussianParamDim);
    for (size_t i = 0; i < eff.size(); ++i) {
      eff[i] = static_cast<double>(pv[i]) + static_cast<double>(dv[i]);
    }
    return eff;
  };
  const std::vector<double> eff = effective(params.data().data(), delta.data().data());
  const std::vector<Prep> prep = prepare(eff.data(), n, cam);
  const std::vector<int> order = sorted_order(prep);
  const std::vector<double> buf = forward_buffers(prep, order, cam, opts);
  const double loss = rgbd_loss_sum(buf, target, depth_weight, use_rgb, use_depth);

  auto node = make_node("render_rgbd_loss", {1}, {params, delta});
  node->value[0] = static_cast<float>(loss);
  node->scalar64 = loss;
  node->has_scalar64 = true;
  finalize_node(node);
  node->backward_fn = [cam, opts, n, target, depth_weight, use_rgb, use_depth,
                       effective](Node& self) {
    auto& pp = self.parents[0];
    auto& pd = self.parents[1];
    bool need_p = pp->requires_grad;
    if (need_p) {
      pp->ensure_grad();
      need_p = !pp->frozen;
    }
    bool need_d = pd->requires_grad;
    if (need_d) {
      pd->ensure_grad();
      need_d = !pd->frozen;
    }
    if (!need_p && !need_d) return;
    const std::vector<double> eff2 = effective(pp->value.data(), pd->value.data());
    const std::vector<Prep> prep2 = prepare(eff2.data(), n, cam);
    const std::vector<int> order2 = sorted_order(prep2);
    const std::vector<double> buf2 = forward_buffers(prep2, order2, cam, opts);
    const std::vector<double> g5 =
        rgbd_loss_grad5(buf2, target, self.grad[0], depth_weight, use_rgb, use_depth);
    std::vector<double> dparams(static_cast<size_t>(n) * kGaussianParamDim, 0.0);
    backward_params(prep2, order2, cam, opts, g5.data(), dparams.data());
    for (size_t i = 0; i < dparams.size(); ++i) {
      const float g = static_cast<float>(dparams[i]);
      if (need_p) pp->grad[i] += g;
      if (need_d) pd->grad[i] += g;
    }
  };
  return Tensor(node);
}

}  // namespace gswm
