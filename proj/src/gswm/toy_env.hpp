// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gswm/camera.hpp"
#include "gswm/pointcloud.hpp"
#include "gswm/rng.hpp"

namespace gswm {

enum class TaskKind { kReach, kPush };
const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& name);

enum class TargetShape { kSphere, kBox };

struct SphereBody {
  Vec3d center;
  double radius = 0.0;
  Vec3d color;
};

struct BoxBody {
  Vec3d center;
  Vec3d half;
  Vec3d color;
};

// A desk-scale manipulation scene: a spherical agent, one movable target
// body, and a goal point, all inside an axis-aligned workspace.
struct Scene {
  Box workspace{{-0.5, -0.5, 0.0}, {0.5, 0.5, 1.0}};
  SphereBody agent{{0.0, 0.0, 0.3}, 0.03, {0.9, 0.25, 0.2}};
  TargetShape target_shape = TargetShape::kSphere;
  Vec3d target{0.15, 0.0, 0.3};
  double target_radius = 0.04;
  Vec3d target_half{0.04, 0.04, 0.04};
  Vec3d target_color{0.2, 0.45, 0.9};
  Vec3d goal{0.3, 0.0, 0.3};

  // Largest reach of the target body from its center.
  double target_extent() const;
  // Bodies and goal inside the workspace, positive radii. ContractError.
  void validate() const;
};

struct EnvConfig {
  double v_max = 0.05;
  int max_steps = 60;
  double reach_threshold = 0.05;
  double push_threshold = 0.07;
  int image_width = 64;
  int image_height = 64;
};

// The fixed third-person view every observation is rendered from.
Camera default_camera(int width, int height);

// Smallest ray parameter s >= 0 with o + s*d on the body surface, or -1 when
// the ray misses. d need not be unit length.
double ray_sphere(const Vec3d& o, const Vec3d& d, const Vec3d& center, double radius);
double ray_box(const Vec3d& o, const Vec3d& d, const Vec3d& center, const Vec3d& half);

struct GroundTruthFrame {
  std::vector<float> rgb;    // [H*W*3] in [0,1]
  std::vector<float> depth;  // [H*W] camera-frame z in meters, 0 on miss
};

// Analytic nearest-hit raycast with flat Lambert shading under a fixed
// light. Rays pass through integer pixel coordinates, matching unproject,
// and hits outside [near_clip, far_clip] fall through to the background
// (color 0, depth 0).
GroundTruthFrame render_bodies(const std::vector<SphereBody>& spheres,
                               const std::vector<BoxBody>& boxes, const Camera& cam);
GroundTruthFrame render_ground_truth(const Scene& scene, const Camera& cam);

// Kinematic update: the agent moves by `action` (norm at most v_max) and is
// clamped to the workspace; an overlapping target is displaced along the
// contact normal until the bodies just touch.
Scene env_step(const Scene& scene, const Vec3d& action, const EnvConfig& cfg);

// Scripted expert. Reach: proportional step toward the goal, clamped to
// v_max. Push: approach a waypoint behind the target on the target-to-goal
// line, then drive through the target toward the goal.
Vec3d expert_action(const Scene& scene, TaskKind task, const EnvConfig& cfg);

bool task_success(const Scene& scene, TaskKind task, const EnvConfig& cfg);

// Deterministic scene sampler; every draw comes from `rng`.
Scene random_scene(TaskKind task, RngStream& rng, const EnvConfig& cfg);

using PolicyFn = std::function<Vec3d(const Scene& scene, int step_index)>;

// Closed-loop evaluation: `episodes` independently seeded episodes of at most
// max_steps; returns the success fraction. Policy outputs are norm-clamped
// to v_max before stepping. ContractError when episodes < 1.
double rollout_success(const PolicyFn& policy, TaskKind task, int episodes, uint64_t seed,
                       const EnvConfig& cfg);

}  // namespace gswm
