// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gswm/camera.hpp"
#include "gswm/diffusion.hpp"
#include "gswm/toy_env.hpp"

namespace gswm {

inline constexpr int kDemoFormatVersion = 1;

// One executed expert step: the observation rendered before acting, the
// proprioceptive state, and the applied action. RGB is stored already
// quantized to 8-bit levels so in-memory and reloaded datasets are
// bit-identical.
struct DemoRecord {
  std::vector<float> rgb;    // [H*W*3]
  std::vector<float> depth;  // [H*W]
  std::array<float, 3> state{};
  std::array<float, 3> action{};
  int t = 0;
};

struct DemoEpisode {
  uint64_t seed = 0;
  std::vector<DemoRecord> steps;
};

struct DemoDataset {
  TaskKind task = TaskKind::kReach;
  EnvConfig env;
  Camera cam;
  Normalizer action_norm;
  Normalizer state_norm;
  std::vector<DemoEpisode> episodes;

  size_t total_steps() const;
};

// Runs the scripted expert until `count` successful episodes are collected
// (scene seeds derived from `seed` by attempt counter). Fails with
// ContractError if 20 * count attempts do not yield enough successes.
DemoDataset generate_demos(TaskKind task, int count, uint64_t seed, const EnvConfig& cfg);

// Demo directory: manifest.json (format version, task, env config, camera,
// normalizer stats, per-episode step counts) plus per-episode folders of
// rgb PPMs, depth rasters, and one trajectory block of little-endian 32-bit
// floats. Loading a different format version raises ConfigError.
void save_demos(const std::string& dir, const DemoDataset& ds);
DemoDataset load_demos(const std::string& dir);

nlohmann::json normalizer_to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);
nlohmann::json env_to_json(const EnvConfig& cfg);
EnvConfig env_from_json(const nlohmann::json& j);

}  // namespace gswm
