// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/toy_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gswm/errors.hpp"

namespace gswm {

namespace {

const Vec3d kLightDir = Vec3d{-0.3, -0.6, 0.75}.normalized();
constexpr double kAmbient = 0.35;
constexpr double kDiffuse = 0.65;

double clamp_d(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

Vec3d clamp_point(const Vec3d& p, const Vec3d& lo, const Vec3d& hi) {
  return {clamp_d(p.x, lo.x, hi.x), clamp_d(p.y, lo.y, hi.y), clamp_d(p.z, lo.z, hi.z)};
}

Vec3d clamp_norm(const Vec3d& v, double max_norm) {
  const double n = v.norm();
  if (n <= max_norm || n == 0.0) return v;
  return v * (max_norm / n);
}

struct Hit {
  double s = -1.0;
  Vec3d normal;
  Vec3d color;
};

bool nearer(double s, const Hit& best) { return s >= 0.0 && (best.s < 0.0 || s < best.s); }

void require_inside(const Box& ws, const Vec3d& lo_pad, const Vec3d& p, const char* what) {
  if (p.x < ws.min.x + lo_pad.x || p.x > ws.max.x - lo_pad.x || p.y < ws.min.y + lo_pad.y ||
      p.y > ws.max.y - lo_pad.y || p.z < ws.min.z + lo_pad.z || p.z > ws.max.z - lo_pad.z)
    throw ContractError(std::string("Scene: ") + what + " outside workspace");
}

}  // namespace

const char* task_name(TaskKind t) { return t == TaskKind::kReach ? "reach" : "push"; }

TaskKind task_from_name(const std::string& name) {
  if (name == "reach") return TaskKind::kReach;
  if (name == "push") return TaskKind::kPush;
  throw ConfigError("unknown task: " + name);
}

double Scene::target_extent() const {
  if (target_shape == TargetShape::kSphere) return target_radius;
  return std::max(target_half.x, std::max(target_half.y, target_half.z));
}

void Scene::validate() const {
  workspace.validate();
  if (agent.radius <= 0.0) throw ContractError("Scene: agent radius must be positive");
  Vec3d pad{agent.radius, agent.radius, agent.radius};
  require_inside(workspace, pad, agent.center, "agent");
  if (target_shape == TargetShape::kSphere) {
    if (target_radius <= 0.0) throw ContractError("Scene: target radius must be positive");
    Vec3d tp{target_radius, target_radius, target_radius};
    require_inside(workspace, tp, target, "target");
  } else {
    if (target_half.x <= 0.0 || target_half.y <= 0.0 || target_half.z <= 0.0)
      throw ContractError("Scene: target half extents must be positive");
    require_inside(workspace, target_half, target, "target");
  }
  require_inside(workspace, {0, 0, 0}, goal, "goal");
}

Camera default_camera(int width, int height) {
  return Camera::look_at({0.0, -0.85, 0.8}, {0.0, 0.0, 0.35}, {0.0, 0.0, 1.0}, 60.0, width,
                         height, 0.05, 3.0);
}

double ray_sphere(const Vec3d& o, const Vec3d& d, const Vec3d& center, double radius) {
  const Vec3d oc = o - center;
  const double a = d.dot(d);
  const double b = 2.0 * oc.dot(d);
  const double c = oc.dot(oc) - radius * radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return -1.0;
  const double root = std::sqrt(disc);
  const double s0 = (-b - root) / (2.0 * a);
  if (s0 >= 0.0) return s0;
  const double s1 = (-b + root) / (2.0 * a);
  return s1 >= 0.0 ? s1 : -1.0;
}

double ray_box(const Vec3d& o, const Vec3d& d, const Vec3d& center, const Vec3d& half) {
  double t_min = -std::numeric_limits<double>::infinity();
  double t_max = std::numeric_limits<double>::infinity();
  const double ov[3] = {o.x - center.x, o.y - center.y, o.z - center.z};
  const double dv[3] = {d.x, d.y, d.z};
  const double hv[3] = {half.x, half.y, half.z};
  for (int i = 0; i < 3; ++i) {
    if (dv[i] == 0.0) {
      if (std::abs(ov[i]) > hv[i]) return -1.0;
      continue;
    }
    double t0 = (-hv[i] - ov[i]) / dv[i];
    double t1 = (hv[i] - ov[i]) / dv[i];
    if (t0 > t1) std::swap(t0, t1);
    t_min = std::max(t_min, t0);
    t_max = std::min(t_max, t1);
    if (t_min > t_max) return -1.0;
  }
  if (t_max < 0.0) return -1.0;
  return t_min >= 0.0 ? t_min : t_max;
}

namespace {

Vec3d box_normal(const Vec3d& p, const Vec3d& center, const Vec3d& half) {
  const Vec3d r = p - center;
  const double dx = half.x - std::abs(r.x);
  const double dy = half.y - std::abs(r.y);
  const double dz = half.z - std::abs(r.z);
  if (dx <= dy && dx <= dz) return {r.x >= 0.0 ? 1.0 : -1.0, 0.0, 0.0};
  if (dy <= dz) return {0.0, r.y >= 0.0 ? 1.0 : -1.0, 0.0};
  return {0.0, 0.0, r.z >= 0.0 ? 1.0 : -1.0};
}

}  // namespace

GroundTruthFrame render_bodies(const std::vector<SphereBody>& spheres,
                               const std::vector<BoxBody>& boxes, const Camera& cam) {
  cam.validate();
  const Vec3d origin = cam.camera_to_world({0.0, 0.0, 0.0});
  const Mat3 rot_t = cam.rot.transposed();
  GroundTruthFrame frame;
  const size_t n_px = static_cast<size_t>(cam.width) * cam.height;
  frame.rgb.assign(n_px * 3, 0.0f);
  frame.depth.assign(n_px, 0.0f);
  for (int iy = 0; iy < cam.height; ++iy) {
    for (int ix = 0; ix < cam.width; ++ix) {
      const Vec3d d_cam{(ix - cam.cx) / cam.fx, (iy - cam.cy) / cam.fy, 1.0};
      const Vec3d d = rot_t * d_cam;
      Hit best;
      for (const auto& sp : spheres) {
        const double s = ray_sphere(origin, d, sp.center, sp.radius);
        if (nearer(s, best)) {
          const Vec3d p = origin + d * s;
          best = {s, (p - sp.center) * (1.0 / sp.radius), sp.color};
        }
      }
      for (const auto& bx : boxes) {
        const double s = ray_box(origin, d, bx.center, bx.half);
        if (nearer(s, best)) best = {s, box_normal(origin + d * s, bx.center, bx.half), bx.color};
      }
      if (best.s < cam.near_clip || best.s > cam.far_clip) continue;
      const double shade = kAmbient + kDiffuse * std::max(0.0, best.normal.dot(kLightDir));
      const size_t pix = static_cast<size_t>(iy) * cam.width + ix;
      frame.rgb[pix * 3 + 0] = static_cast<float>(clamp_d(best.color.x * shade, 0.0, 1.0));
      frame.rgb[pix * 3 + 1] = static_cast<float>(clamp_d(best.color.y * shade, 0.0, 1.0));
      frame.rgb[pix * 3 + 2] = static_cast<float>(clamp_d(best.color.z * shade, 0.0, 1.0));
      frame.depth[pix] = static_cast<float>(best.s);
    }
  }
  return frame;
}

GroundTruthFrame render_ground_truth(const Scene& scene, const Camera& cam) {
  std::vector<SphereBody> spheres{scene.agent};
  std::vector<BoxBody> boxes;
  if (scene.target_shape == TargetShape::kSphere)
    spheres.push_back({scene.target, scene.target_radius, scene.target_color});
  else
    boxes.push_back({scene.target, scene.target_half, scene.target_color});
  return render_bodies(spheres, boxes, cam);
}

Scene env_step(const Scene& scene, const Vec3d& action, const EnvConfig& cfg) {
  if (action.norm() > cfg.v_max + 1e-9)
    throw ContractError("env_step: action norm exceeds v_max");
  Scene next = scene;
  const double ra = next.agent.radius;
  next.agent.center = clamp_point(next.agent.center + action,
                                  next.workspace.min + Vec3d{ra, ra, ra},
                                  next.workspace.max - Vec3d{ra, ra, ra});
  Vec3d push_dir;
  double pen = 0.0;
  if (next.target_shape == TargetShape::kSphere) {
    const Vec3d delta = next.target - next.agent.center;
    const double dist = delta.norm();
    pen = ra + next.target_radius - dist;
    if (pen > 0.0) push_dir = dist > 1e-12 ? delta * (1.0 / dist) : Vec3d{0.0, 0.0, 1.0};
  } else {
    const Vec3d lo = next.target - next.target_half;
    const Vec3d hi = next.target + next.target_half;
    const Vec3d q = clamp_point(next.agent.center, lo, hi);
    const Vec3d delta = q - next.agent.center;
    const double dist = delta.norm();
    pen = ra - dist;
    if (pen > 0.0) {
      if (dist > 1e-12) {
        push_dir = delta * (1.0 / dist);
      } else {
        const Vec3d c = next.target - next.agent.center;
        const double cn = c.norm();
        push_dir = cn > 1e-12 ? c * (1.0 / cn) : Vec3d{0.0, 0.0, 1.0};
      }
    }
  }
  if (pen > 0.0) {
    next.target = next.target + push_dir * pen;
    const double te = next.target_extent();
    next.target = clamp_point(next.target, next.workspace.min + Vec3d{te, te, te},
                              next.workspace.max - Vec3d{te, te, te});
  }
  return next;
}

Vec3d expert_action(const Scene& scene, TaskKind task, const EnvConfig& cfg) {
  if (task == TaskKind::kReach) return clamp_norm(scene.goal - scene.agent.center, cfg.v_max);
  const Vec3d to_goal = scene.goal - scene.target;
  const double dg = to_goal.norm();
  if (dg < 1e-9) return {0.0, 0.0, 0.0};
  const Vec3d dir = to_goal * (1.0 / dg);
  const double rsum = scene.agent.radius + scene.target_extent();
  const Vec3d waypoint = scene.target - dir * (1.2 * rsum);
  const Vec3d to_w = waypoint - scene.agent.center;
  if (to_w.norm() > 0.25 * rsum) return clamp_norm(to_w, cfg.v_max);
  return clamp_norm(scene.goal - scene.agent.center, cfg.v_max);
}

bool task_success(const Scene& scene, TaskKind task, const EnvConfig& cfg) {
  if (task == TaskKind::kReach) return (scene.goal - scene.agent.center).norm() < cfg.reach_threshold;
  return (scene.goal - scene.target).norm() < cfg.push_threshold;
}

Scene random_scene(TaskKind task, RngStream& rng, const EnvConfig& cfg) {
  (void)cfg;
  Scene s;
  auto u = [&rng](double lo, double hi) { return rng.uniform(lo, hi); };
  if (task == TaskKind::kReach) {
    s.agent.center = {u(-0.3, 0.3), u(-0.3, 0.3), u(0.15, 0.6)};
    for (int trial = 0; trial < 200; ++trial) {
      s.goal = {u(-0.35, 0.35), u(-0.35, 0.35), u(0.1, 0.7)};
      const double d = (s.goal - s.agent.center).norm();
      if (d >= 0.15 && d <= 0.5) break;
    }
    s.target_shape = rng.uniform() < 0.5 ? TargetShape::kSphere : TargetShape::kBox;
    for (int trial = 0; trial < 200; ++trial) {
      s.target = {u(-0.3, 0.3), u(-0.3, 0.3), u(0.15, 0.6)};
      if ((s.target - s.agent.center).norm() > 0.12 && (s.target - s.goal).norm() > 0.12) break;
    }
  } else {
    s.target_shape = TargetShape::kSphere;
    s.target = {u(-0.18, 0.18), u(-0.18, 0.18), u(0.15, 0.45)};
    const double phi = u(0.0, 2.0 * 3.14159265358979323846);
    const Vec3d dir{std::cos(phi), std::sin(phi), 0.0};
    s.goal = s.target + dir * u(0.12, 0.2);
    s.goal.x = clamp_d(s.goal.x, -0.4, 0.4);
    s.goal.y = clamp_d(s.goal.y, -0.4, 0.4);
    const Vec3d lateral{-dir.y, dir.x, 0.0};
    s.agent.center = s.target - dir * u(0.15, 0.28) + lateral * u(-0.03, 0.03);
    const double ra = s.agent.radius;
    s.agent.center = clamp_point(s.agent.center, s.workspace.min + Vec3d{ra, ra, ra},
                                 s.workspace.max - Vec3d{ra, ra, ra});
  }
  s.validate();
  return s;
}

double rollout_success(const PolicyFn& policy, TaskKind task, int episodes, uint64_t seed,
                       const EnvConfig& cfg) {
  if (episodes < 1) throw ContractError("rollout_success: episodes must be >= 1");
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    RngStream rng(derive_seed(seed, "episode", static_cast<uint64_t>(e)));
    Scene scene = random_scene(task, rng, cfg);
    bool ok = task_success(scene, task, cfg);
    for (int t = 0; t < cfg.max_steps && !ok; ++t) {
      const Vec3d a = clamp_norm(policy(scene, t), cfg.v_max);
      scene = env_step(scene, a, cfg);
      ok = task_success(scene, task, cfg);
    }
    wins += ok ? 1 : 0;
  }
  return static_cast<double>(wins) / episodes;
}

}  // namespace gswm
