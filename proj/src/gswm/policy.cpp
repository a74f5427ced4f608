// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/policy.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "gswm/errors.hpp"

namespace gswm {

void PipelineConfig::validate() const {
  if (chunk.horizon < 1 || chunk.n_obs < 1 || chunk.n_act < 1 || chunk.n_act > chunk.horizon)
    throw ConfigError("chunk spec out of range");
  if (chunk.horizon != chunk.n_obs - 1 + chunk.n_act)
    throw ConfigError("chunk horizon must equal n_obs - 1 + n_act");
  if (action_dim < 1) throw ConfigError("action_dim must be positive");
  if (state_dim < 1) throw ConfigError("state_dim must be positive");
  if (grid_resolution < 8 || grid_resolution % 8 != 0)
    throw ConfigError("grid_resolution must be a positive multiple of 8");
  if (query_cap < 1) throw ConfigError("query_cap must be positive");
  if (local.max_points < 1) throw ConfigError("local.max_points must be positive");
  bounds.validate();
}

PipelineConfig wire_pipeline(const PipelineConfig& cfg) {
  PipelineConfig out = cfg;
  out.state.in_dim = out.stacked_state_dim();
  out.condition.local_width = out.local.out_width;
  out.condition.volume_channels = out.global.out_channels;
  out.condition.state_width = out.state.out_width;
  out.world.regressor.feature_channels = out.global.out_channels;
  out.world.deform.action_dim = out.action_dim;
  out.diffusion.denoiser.horizon = out.chunk.horizon;
  out.diffusion.denoiser.action_dim = out.action_dim;
  out.diffusion.denoiser.cond_dim = out.condition.width();
  out.diffusion.denoiser.state_dim = out.stacked_state_dim();
  out.validate();
  return out;
}

Dp4Policy::Dp4Policy(Registry& reg, const std::string& prefix, const PipelineConfig& cfg,
                     RngStream& rng)
    : cfg_(wire_pipeline(cfg)),
      local_(reg, prefix + ".local", cfg_.local, rng),
      global_(reg, prefix + ".global", cfg_.global, rng),
      state_(reg, prefix + ".state", cfg_.state, rng),
      cond_(reg, prefix + ".cond", cfg_.condition, rng),
      world_(reg, prefix + ".world", cfg_.world, rng),
      diffusion_(reg, prefix + ".policy", cfg_.diffusion, rng),
      deform_prefix_(prefix + ".world.deform") {}

SceneEncoding Dp4Policy::encode(std::span<const float> rgb, std::span<const float> depth,
                                const Camera& cam, std::vector<float> stacked_state,
                                uint64_t fps_seed) const {
  if (static_cast<int>(stacked_state.size()) != cfg_.stacked_state_dim())
    throw DimensionError("stacked state has wrong width");
  PointCloud full = crop(unproject(rgb, depth, cam), cfg_.bounds);
  SceneEncoding enc;
  enc.cloud = farthest_point_sample(full, static_cast<size_t>(cfg_.local.max_points), fps_seed);
  enc.grid = voxelize(full, cfg_.bounds, cfg_.grid_resolution);
  enc.volume = global_.forward(enc.grid);
  enc.queries = select_query_points(enc.grid, cfg_.query_cap);
  Tensor local = local_.forward(enc.cloud);
  enc.state_row =
      Tensor::of({1, cfg_.stacked_state_dim()}, std::move(stacked_state));
  Tensor semb = state_.forward(enc.state_row);
  enc.condition = cond_.forward(local, enc.volume, semb);
  return enc;
}

Tensor Dp4Policy::regress(const SceneEncoding& enc) const {
  return world_.regress(enc.volume, enc.queries);
}

Tensor Dp4Policy::action_loss(const SceneEncoding& enc, const Tensor& chunk, int k,
                              const Tensor& eps) const {
  return diffusion_.train_loss(chunk, k, eps, enc.condition, enc.state_row);
}

Tensor Dp4Policy::sample_chunk(const SceneEncoding& enc, uint64_t seed) const {
  return diffusion_.sample(enc.condition, enc.state_row, seed);
}

Tensor make_action_chunk(const DemoEpisode& ep, int t, const ChunkSpec& spec,
                         const Normalizer& action_norm) {
  const int len = static_cast<int>(ep.steps.size());
  if (len == 0) throw ContractError("empty episode");
  if (t < 0 || t >= len) throw ContractError("chunk anchor outside episode");
  const int dims = action_norm.dims();
  std::vector<float> data;
  data.reserve(static_cast<size_t>(spec.horizon) * dims);
  for (int j = 0; j < spec.horizon; ++j) {
    int idx = std::clamp(t - (spec.n_obs - 1) + j, 0, len - 1);
    std::vector<float> row = action_norm.normalize_row(ep.steps[idx].action);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor::of({spec.horizon, dims}, std::move(data));
}

std::vector<float> make_stacked_state(const DemoEpisode& ep, int t, const ChunkSpec& spec,
                                      const Normalizer& state_norm) {
  const int len = static_cast<int>(ep.steps.size());
  if (len == 0) throw ContractError("empty episode");
  if (t < 0 || t >= len) throw ContractError("state anchor outside episode");
  std::vector<float> out;
  out.reserve(static_cast<size_t>(spec.n_obs) * state_norm.dims());
  for (int j = spec.n_obs - 1; j >= 0; --j) {
    int idx = std::max(t - j, 0);
    std::vector<float> row = state_norm.normalize_row(ep.steps[idx].state);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

ChunkedController::ChunkedController(const Dp4Policy& policy, const Camera& cam,
                                     const Normalizer& action_norm, const Normalizer& state_norm,
                                     uint64_t seed)
    : policy_(&policy), cam_(cam), action_norm_(action_norm), state_norm_(state_norm),
      seed_(seed) {
  if (action_norm_.dims() != 3 || state_norm_.dims() != 3)
    throw ConfigError("controller drives a 3-dof agent");
}

void ChunkedController::reset() {
  history_.clear();
  pending_.clear();
}

Vec3d ChunkedController::act(const Scene& scene, int step) {
  if (step == 0) reset();
  const ChunkSpec& spec = policy_->config().chunk;
  const std::array<float, 3> q{static_cast<float>(scene.agent.center.x),
                               static_cast<float>(scene.agent.center.y),
                               static_cast<float>(scene.agent.center.z)};
  std::vector<float> nq = state_norm_.normalize_row(q);
  if (history_.empty()) {
    history_.assign(static_cast<size_t>(spec.n_obs), nq);
  } else {
    history_.push_back(nq);
    while (history_.size() > static_cast<size_t>(spec.n_obs)) history_.erase(history_.begin());
  }
  if (pending_.empty()) {
    std::vector<float> stacked;
    for (const auto& h : history_) stacked.insert(stacked.end(), h.begin(), h.end());
    GroundTruthFrame obs = render_ground_truth(scene, cam_);
    SceneEncoding enc = policy_->encode(obs.rgb, obs.depth, cam_, std::move(stacked),
                                        derive_seed(seed_, "fps", queries_));
    Tensor chunk = policy_->sample_chunk(enc, derive_seed(seed_, "query", queries_));
    ++queries_;
    Tensor window = execute_window(chunk, spec);
    std::span<const float> w = window.data();
    const int dims = window.dim(1);
    for (int r = 0; r < window.dim(0); ++r) {
      std::vector<float> row(w.begin() + static_cast<size_t>(r) * dims,
                             w.begin() + static_cast<size_t>(r + 1) * dims);
      pending_.push_back(action_norm_.denormalize_row(row));
    }
  }
  std::vector<float> a = pending_.front();
  pending_.erase(pending_.begin());
  return {a[0], a[1], a[2]};
}

}  // namespace gswm
