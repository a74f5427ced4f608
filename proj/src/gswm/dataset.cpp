// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "gswm/checkpoint.hpp"
#include "gswm/errors.hpp"
#include "gswm/image_io.hpp"

namespace gswm {

namespace {

namespace fs = std::filesystem;

constexpr char kTrajMagic[8] = {'G', 'S', 'W', 'M', 'T', 'R', 'A', 'J'};

float quantize_level(float v) {
  double x = v;
  if (x < 0.0) x = 0.0;
  if (x > 1.0) x = 1.0;
  return static_cast<float>(std::lround(x * 255.0)) / 255.0f;
}

std::string pad3(int v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%03d", v);
  return buf;
}

std::string traj_bytes(const DemoEpisode& ep) {
  std::string out(kTrajMagic, sizeof(kTrajMagic));
  append_u32_le(out, static_cast<uint32_t>(kDemoFormatVersion));
  append_u32_le(out, static_cast<uint32_t>(ep.steps.size()));
  append_u32_le(out, 3);
  append_u32_le(out, 3);
  for (const auto& rec : ep.steps)
    for (float v : rec.state) append_f32_le(out, v);
  for (const auto& rec : ep.steps)
    for (float v : rec.action) append_f32_le(out, v);
  return out;
}

void parse_traj(const std::string& bytes, DemoEpisode& ep) {
  const size_t head = sizeof(kTrajMagic) + 4 * 4;
  if (bytes.size() < head || std::memcmp(bytes.data(), kTrajMagic, sizeof(kTrajMagic)) != 0)
    throw ConfigError("demo trajectory: bad header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const uint32_t version = read_u32_le(p + 8);
  const uint32_t steps = read_u32_le(p + 12);
  const uint32_t state_dim = read_u32_le(p + 16);
  const uint32_t action_dim = read_u32_le(p + 20);
  if (version != static_cast<uint32_t>(kDemoFormatVersion))
    throw ConfigError("demo trajectory: format version mismatch");
  if (state_dim != 3 || action_dim != 3)
    throw ConfigError("demo trajectory: unexpected dimensions");
  if (steps != ep.steps.size()) throw ConfigError("demo trajectory: step count mismatch");
  const size_t need = head + static_cast<size_t>(steps) * (state_dim + action_dim) * 4;
  if (bytes.size() != need) throw ConfigError("demo trajectory: truncated block");
  size_t off = head;
  for (auto& rec : ep.steps)
    for (auto& v : rec.state) {
      v = read_f32_le(p + off);
      off += 4;
    }
  for (auto& rec : ep.steps)
    for (auto& v : rec.action) {
      v = read_f32_le(p + off);
      off += 4;
    }
}

}  // namespace

nlohmann::json normalizer_to_json(const Normalizer& n) {
  return {{"lo", n.lo()}, {"hi", n.hi()}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  return Normalizer(j.at("lo").get<std::vector<double>>(),
                    j.at("hi").get<std::vector<double>>());
}

size_t DemoDataset::total_steps() const {
  size_t n = 0;
  for (const auto& ep : episodes) n += ep.steps.size();
  return n;
}

DemoDataset generate_demos(TaskKind task, int count, uint64_t seed, const EnvConfig& cfg) {
  if (count < 1) throw ContractError("generate_demos: count must be >= 1");
  DemoDataset ds;
  ds.task = task;
  ds.env = cfg;
  ds.cam = default_camera(cfg.image_width, cfg.image_height);
  const int max_attempts = 20 * count;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(ds.episodes.size()) < count;
       ++attempt) {
    const uint64_t ep_seed = derive_seed(seed, "demo", static_cast<uint64_t>(attempt));
    RngStream rng(ep_seed);
    Scene scene = random_scene(task, rng, cfg);
    DemoEpisode ep;
    ep.seed = ep_seed;
    bool ok = task_success(scene, task, cfg);
    for (int t = 0; t < cfg.max_steps && !ok; ++t) {
      GroundTruthFrame frame = render_ground_truth(scene, ds.cam);
      DemoRecord rec;
      rec.rgb.resize(frame.rgb.size());
      for (size_t i = 0; i < frame.rgb.size(); ++i) rec.rgb[i] = quantize_level(frame.rgb[i]);
      rec.depth = std::move(frame.depth);
      const Vec3d a = expert_action(scene, task, cfg);
      rec.state = {static_cast<float>(scene.agent.center.x),
                   static_cast<float>(scene.agent.center.y),
                   static_cast<float>(scene.agent.center.z)};
      rec.action = {static_cast<float>(a.x), static_cast<float>(a.y), static_cast<float>(a.z)};
      rec.t = t;
      ep.steps.push_back(std::move(rec));
      scene = env_step(scene, a, cfg);
      ok = task_success(scene, task, cfg);
    }
    if (ok && !ep.steps.empty()) ds.episodes.push_back(std::move(ep));
  }
  if (static_cast<int>(ds.episodes.size()) < count)
    throw ContractError("generate_demos: expert could not collect enough successful episodes");
  std::vector<std::vector<float>> action_rows, state_rows;
  for (const auto& ep : ds.episodes)
    for (const auto& rec : ep.steps) {
      action_rows.emplace_back(rec.action.begin(), rec.action.end());
      state_rows.emplace_back(rec.state.begin(), rec.state.end());
    }
  ds.action_norm = fit_normalizer(action_rows);
  ds.state_norm = fit_normalizer(state_rows);
  return ds;
}

nlohmann::json camera_to_json(const Camera& cam) {
  return {{"fx", cam.fx},
          {"fy", cam.fy},
          {"cx", cam.cx},
          {"cy", cam.cy},
          {"width", cam.width},
          {"height", cam.height},
          {"near_clip", cam.near_clip},
          {"far_clip", cam.far_clip},
          {"rot", cam.rot.m},
          {"trans", std::array<double, 3>{cam.trans.x, cam.trans.y, cam.trans.z}}};
}

Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.near_clip = j.at("near_clip").get<double>();
  cam.far_clip = j.at("far_clip").get<double>();
  cam.rot.m = j.at("rot").get<std::array<double, 9>>();
  auto tr = j.at("trans").get<std::array<double, 3>>();
  cam.trans = {tr[0], tr[1], tr[2]};
  cam.validate();
  return cam;
}

nlohmann::json env_to_json(const EnvConfig& cfg) {
  return {{"v_max", cfg.v_max},
          {"max_steps", cfg.max_steps},
          {"reach_threshold", cfg.reach_threshold},
          {"push_threshold", cfg.push_threshold},
          {"image_width", cfg.image_width},
          {"image_height", cfg.image_height}};
}

EnvConfig env_from_json(const nlohmann::json& j) {
  EnvConfig cfg;
  cfg.v_max = j.at("v_max").get<double>();
  cfg.max_steps = j.at("max_steps").get<int>();
  cfg.reach_threshold = j.at("reach_threshold").get<double>();
  cfg.push_threshold = j.at("push_threshold").get<double>();
  cfg.image_width = j.at("image_width").get<int>();
  cfg.image_height = j.at("image_height").get<int>();
  return cfg;
}

void save_demos(const std::string& dir, const DemoDataset& ds) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kDemoFormatVersion;
  manifest["task"] = task_name(ds.task);
  manifest["env"] = env_to_json(ds.env);
  manifest["camera"] = camera_to_json(ds.cam);
  manifest["action_norm"] = normalizer_to_json(ds.action_norm);
  manifest["state_norm"] = normalizer_to_json(ds.state_norm);
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& ep : ds.episodes)
    eps.push_back({{"seed", ep.seed}, {"steps", ep.steps.size()}});
  manifest["episodes"] = eps;
  write_file_bytes((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const auto& ep = ds.episodes[e];
    const fs::path ep_dir = fs::path(dir) / ("ep" + pad3(static_cast<int>(e)));
    fs::create_directories(ep_dir);
    for (size_t t = 0; t < ep.steps.size(); ++t) {
      const auto& rec = ep.steps[t];
      write_ppm((ep_dir / ("rgb" + pad3(static_cast<int>(t)) + ".ppm")).string(),
                ds.env.image_width, ds.env.image_height, rec.rgb);
      write_depth_raster((ep_dir / ("depth" + pad3(static_cast<int>(t)) + ".bin")).string(),
                         ds.env.image_width, ds.env.image_height, rec.depth);
    }
    write_file_bytes((ep_dir / "traj.bin").string(), traj_bytes(ep));
  }
}

DemoDataset load_demos(const std::string& dir) {
  const nlohmann::json manifest =
      nlohmann::json::parse(read_file_bytes((fs::path(dir) / "manifest.json").string()));
  if (manifest.at("format").get<int>() != kDemoFormatVersion)
    throw ConfigError("load_demos: unsupported demo format version");
  DemoDataset ds;
  ds.task = task_from_name(manifest.at("task").get<std::string>());
  ds.env = env_from_json(manifest.at("env"));
  ds.cam = camera_from_json(manifest.at("camera"));
  ds.action_norm = normalizer_from_json(manifest.at("action_norm"));
  ds.state_norm = normalizer_from_json(manifest.at("state_norm"));
  const auto& eps = manifest.at("episodes");
  for (size_t e = 0; e < eps.size(); ++e) {
    DemoEpisode ep;
    ep.seed = eps[e].at("seed").get<uint64_t>();
    ep.steps.resize(eps[e].at("steps").get<size_t>());
    const fs::path ep_dir = fs::path(dir) / ("ep" + pad3(static_cast<int>(e)));
    for (size_t t = 0; t < ep.steps.size(); ++t) {
      auto& rec = ep.steps[t];
      rec.t = static_cast<int>(t);
      LoadedImage img = read_ppm((ep_dir / ("rgb" + pad3(static_cast<int>(t)) + ".ppm")).string());
      if (img.width != ds.env.image_width || img.height != ds.env.image_height)
        throw DimensionError("load_demos: image size disagrees with manifest");
      rec.rgb = std::move(img.rgb);
      LoadedDepth dep =
          read_depth_raster((ep_dir / ("depth" + pad3(static_cast<int>(t)) + ".bin")).string());
      if (dep.width != ds.env.image_width || dep.height != ds.env.image_height)
        throw DimensionError("load_demos: depth size disagrees with manifest");
      rec.depth = std::move(dep.depth);
    }
    parse_traj(read_file_bytes((ep_dir / "traj.bin").string()), ep);
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace gswm
