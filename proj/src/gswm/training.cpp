// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>

#include "gswm/errors.hpp"

namespace gswm {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  return out;
}

nlohmann::json vec3_to_json(const Vec3d& v) { return {v.x, v.y, v.z}; }

Vec3d vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json box_to_json(const Box& b) {
  return {{"min", vec3_to_json(b.min)}, {"max", vec3_to_json(b.max)}};
}

Box box_from_json(const nlohmann::json& j, const Box& d) {
  Box out = d;
  if (j.contains("min")) out.min = vec3_from_json(j.at("min"));
  if (j.contains("max")) out.max = vec3_from_json(j.at("max"));
  return out;
}

template <size_t N>
nlohmann::json arr_to_json(const std::array<int, N>& a) {
  return std::vector<int>(a.begin(), a.end());
}

template <size_t N>
std::array<int, N> arr_from_json(const nlohmann::json& j, const std::array<int, N>& d) {
  if (j.is_null()) return d;
  auto v = j.get<std::vector<int>>();
  if (v.size() != N) throw ConfigError("array field has wrong length");
  std::array<int, N> out;
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

nlohmann::json pipeline_to_json(const PipelineConfig& p) {
  return {
      {"chunk",
       {{"horizon", p.chunk.horizon}, {"n_obs", p.chunk.n_obs}, {"n_act", p.chunk.n_act}}},
      {"action_dim", p.action_dim},
      {"state_dim", p.state_dim},
      {"bounds", box_to_json(p.bounds)},
      {"grid_resolution", p.grid_resolution},
      {"query_cap", p.query_cap},
      {"local",
       {{"out_width", p.local.out_width},
        {"max_points", p.local.max_points},
        {"hidden", arr_to_json(p.local.hidden)}}},
      {"global",
       {{"in_channels", p.global.in_channels},
        {"channels", arr_to_json(p.global.channels)},
        {"out_channels", p.global.out_channels}}},
      {"state", {{"hidden", p.state.hidden}, {"out_width", p.state.out_width}}},
      {"condition", {{"pooled_width", p.condition.pooled_width}}},
      {"world",
       {{"regressor",
         {{"feature_width", p.world.regressor.feature_width},
          {"trunk_width", p.world.regressor.trunk_width},
          {"trunk_blocks", p.world.regressor.trunk_blocks},
          {"scale_min", p.world.regressor.scale_min},
          {"scale_max", p.world.regressor.scale_max}}},
        {"deform",
         {{"hidden", p.world.deform.hidden},
          {"blocks", p.world.deform.blocks},
          {"deform_all_attributes", p.world.deform.deform_all_attributes}}},
        {"depth_loss_scale", p.world.depth_loss_scale}}},
      {"diffusion",
       {{"denoiser",
         {{"width", p.diffusion.denoiser.width},
          {"blocks", p.diffusion.denoiser.blocks},
          {"step_embed_dim", p.diffusion.denoiser.step_embed_dim},
          {"mode", mode_name(p.diffusion.denoiser.mode)}}},
        {"k_train", p.diffusion.k_train},
        {"k_infer", p.diffusion.k_infer},
        {"eta", p.diffusion.eta}}},
  };
}

PipelineConfig pipeline_from_json(const nlohmann::json& j) {
  PipelineConfig p;
  if (j.contains("chunk")) {
    const auto& c = j.at("chunk");
    p.chunk.horizon = c.value("horizon", p.chunk.horizon);
    p.chunk.n_obs = c.value("n_obs", p.chunk.n_obs);
    p.chunk.n_act = c.value("n_act", p.chunk.n_act);
  }
  p.action_dim = j.value("action_dim", p.action_dim);
  p.state_dim = j.value("state_dim", p.state_dim);
  if (j.contains("bounds")) p.bounds = box_from_json(j.at("bounds"), p.bounds);
  p.grid_resolution = j.value("grid_resolution", p.grid_resolution);
  p.query_cap = j.value("query_cap", p.query_cap);
  if (j.contains("local")) {
    const auto& l = j.at("local");
    p.local.out_width = l.value("out_width", p.local.out_width);
    p.local.max_points = l.value("max_points", p.local.max_points);
    if (l.contains("hidden")) p.local.hidden = arr_from_json<3>(l.at("hidden"), p.local.hidden);
  }
  if (j.contains("global")) {
    const auto& g = j.at("global");
    p.global.in_channels = g.value("in_channels", p.global.in_channels);
    if (g.contains("channels"))
      p.global.channels = arr_from_json<4>(g.at("channels"), p.global.channels);
    p.global.out_channels = g.value("out_channels", p.global.out_channels);
  }
  if (j.contains("state")) {
    const auto& s = j.at("state");
    p.state.hidden = s.value("hidden", p.state.hidden);
    p.state.out_width = s.value("out_width", p.state.out_width);
  }
  if (j.contains("condition")) {
    p.condition.pooled_width = j.at("condition").value("pooled_width", p.condition.pooled_width);
  }
  if (j.contains("world")) {
    const auto& w = j.at("world");
    if (w.contains("regressor")) {
      const auto& r = w.at("regressor");
      p.world.regressor.feature_width = r.value("feature_width", p.world.regressor.feature_width);
      p.world.regressor.trunk_width = r.value("trunk_width", p.world.regressor.trunk_width);
      p.world.regressor.trunk_blocks = r.value("trunk_blocks", p.world.regressor.trunk_blocks);
      p.world.regressor.scale_min = r.value("scale_min", p.world.regressor.scale_min);
      p.world.regressor.scale_max = r.value("scale_max", p.world.regressor.scale_max);
    }
    if (w.contains("deform")) {
      const auto& d = w.at("deform");
      p.world.deform.hidden = d.value("hidden", p.world.deform.hidden);
      p.world.deform.blocks = d.value("blocks", p.world.deform.blocks);
      p.world.deform.deform_all_attributes =
          d.value("deform_all_attributes", p.world.deform.deform_all_attributes);
    }
    p.world.depth_loss_scale = w.value("depth_loss_scale", p.world.depth_loss_scale);
  }
  if (j.contains("diffusion")) {
    const auto& f = j.at("diffusion");
    if (f.contains("denoiser")) {
      const auto& d = f.at("denoiser");
      p.diffusion.denoiser.width = d.value("width", p.diffusion.denoiser.width);
      p.diffusion.denoiser.blocks = d.value("blocks", p.diffusion.denoiser.blocks);
      p.diffusion.denoiser.step_embed_dim =
          d.value("step_embed_dim", p.diffusion.denoiser.step_embed_dim);
      if (d.contains("mode"))
        p.diffusion.denoiser.mode = mode_from_name(d.at("mode").get<std::string>());
    }
    p.diffusion.k_train = f.value("k_train", p.diffusion.k_train);
    p.diffusion.k_infer = f.value("k_infer", p.diffusion.k_infer);
    p.diffusion.eta = f.value("eta", p.diffusion.eta);
  }
  return p;
}

bool params_finite(const Registry& reg) {
  for (const Tensor& p : reg.params())
    for (float v : p.data())
      if (!std::isfinite(v)) return false;
  return true;
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda_3d < 0.0 || lambda_4d < 0.0) throw ConfigError("loss weights must be nonnegative");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (warmup_iters < 0) throw ConfigError("warmup_iters must be nonnegative");
  if (recon_per_batch < 0) throw ConfigError("recon_per_batch must be nonnegative");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  wire_pipeline(pipeline);
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"lambda_3d", cfg.lambda_3d},
      {"lambda_4d", cfg.lambda_4d},
      {"batch", cfg.batch},
      {"epochs", cfg.epochs},
      {"warmup_iters", cfg.warmup_iters},
      {"seed", cfg.seed},
      {"use_rgb_3d", cfg.use_rgb_3d},
      {"use_depth_3d", cfg.use_depth_3d},
      {"use_dynamics", cfg.use_dynamics},
      {"future_from_policy", cfg.future_from_policy},
      {"deterministic", cfg.deterministic},
      {"recon_per_batch", cfg.recon_per_batch},
      {"checkpoint_every", cfg.checkpoint_every},
      {"lr", cfg.lr},
      {"pipeline", pipeline_to_json(cfg.pipeline)},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.lambda_3d = j.value("lambda_3d", cfg.lambda_3d);
  cfg.lambda_4d = j.value("lambda_4d", cfg.lambda_4d);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.warmup_iters = j.value("warmup_iters", cfg.warmup_iters);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.use_rgb_3d = j.value("use_rgb_3d", cfg.use_rgb_3d);
  cfg.use_depth_3d = j.value("use_depth_3d", cfg.use_depth_3d);
  cfg.use_dynamics = j.value("use_dynamics", cfg.use_dynamics);
  cfg.future_from_policy = j.value("future_from_policy", cfg.future_from_policy);
  cfg.deterministic = j.value("deterministic", cfg.deterministic);
  cfg.recon_per_batch = j.value("recon_per_batch", cfg.recon_per_batch);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.lr = j.value("lr", cfg.lr);
  if (j.contains("pipeline")) cfg.pipeline = pipeline_from_json(j.at("pipeline"));
  return cfg;
}

uint64_t config_fingerprint(const nlohmann::json& j) {
  const std::string s = j.dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

PipelineConfig resolved_pipeline(const TrainConfig& cfg) {
  PipelineConfig p = cfg.pipeline;
  p.world.use_rgb = cfg.use_rgb_3d;
  p.world.use_depth = cfg.use_depth_3d;
  return wire_pipeline(p);
}

LossParts joint_loss(const Dp4Policy& policy, const DemoDataset& data,
                     std::span<const BatchSample> batch, size_t recon_count,
                     const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("empty batch");
  const PipelineConfig& pipe = policy.config();
  const Camera& cam = data.cam;
  const double px = static_cast<double>(cam.width) * cam.height;
  const size_t m = std::min(recon_count, batch.size());
  const bool channels_on = cfg.use_rgb_3d || cfg.use_depth_3d;
  const bool do3 = cfg.lambda_3d > 0.0 && channels_on && m > 0;
  const bool do4 = cfg.use_dynamics && cfg.lambda_4d > 0.0 && channels_on && m > 0;

  std::vector<std::pair<Tensor, double>> a_terms, t3_terms, t4_terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    const BatchSample& s = batch[i];
    if (s.episode == nullptr) throw ContractError("batch sample without an episode");
    const DemoEpisode& ep = *s.episode;
    const DemoRecord& rec = ep.steps.at(static_cast<size_t>(s.t));

    Tensor chunk = make_action_chunk(ep, s.t, pipe.chunk, data.action_norm);
    std::vector<float> stacked = make_stacked_state(ep, s.t, pipe.chunk, data.state_norm);
    SceneEncoding enc = policy.encode(rec.rgb, rec.depth, cam, std::move(stacked), s.fps_seed);
    Tensor eps = Tensor::of({pipe.chunk.horizon, pipe.action_dim}, s.eps);
    a_terms.push_back({policy.action_loss(enc, chunk, s.k, eps), 1.0 / batch.size()});

    if (i < m && (do3 || do4)) {
      if (s.t + 1 >= static_cast<int>(ep.steps.size()))
        throw ContractError("reconstruction sample needs a next frame");
      Tensor theta = policy.regress(enc);
      if (do3) {
        RenderedFrame target{cam.width, cam.height, rec.rgb, rec.depth, {}};
        t3_terms.push_back({policy.world().loss_3d(theta, cam, target), 1.0 / (m * px)});
      }
      if (do4) {
        const DemoRecord& next = ep.steps[static_cast<size_t>(s.t) + 1];
        RenderedFrame target{cam.width, cam.height, next.rgb, next.depth, {}};
        std::vector<float> action(rec.action.begin(), rec.action.end());
        if (cfg.future_from_policy) {
          Tensor sampled = policy.sample_chunk(enc, s.future_seed);
          Tensor window = execute_window(sampled, pipe.chunk);
          std::span<const float> w = window.data();
          std::vector<float> row(w.begin(), w.begin() + pipe.action_dim);
          action = data.action_norm.denormalize_row(row);
        }
        t4_terms.push_back(
            {policy.world().loss_4d(theta, action, cam, target), 1.0 / (m * px)});
      }
    }
  }

  LossParts parts;
  Tensor action = weighted_sum_scalars(a_terms);
  parts.action = action.item();
  std::vector<std::pair<Tensor, double>> total_terms{{action, 1.0}};
  if (do3) {
    Tensor l3 = weighted_sum_scalars(t3_terms);
    parts.recon3d = l3.item();
    total_terms.push_back({l3, cfg.lambda_3d});
  }
  if (do4) {
    Tensor l4 = weighted_sum_scalars(t4_terms);
    parts.recon4d = l4.item();
    total_terms.push_back({l4, cfg.lambda_4d});
  }
  parts.total = weighted_sum_scalars(total_terms);
  return parts;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::string out = "iter,loss_total,loss_action,loss_3d,loss_4d,lambda_3d,lambda_4d,lr,wallclock_s\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.iter) + ',' + fmt_double(r.total) + ',' + fmt_double(r.action) + ',' +
           fmt_double(r.recon3d) + ',' + fmt_double(r.recon4d) + ',' + fmt_double(r.lambda_3d) +
           ',' + fmt_double(r.lambda_4d) + ',' + fmt_double(r.lr) + ',' +
           fmt_double(r.wallclock) + '\n';
  }
  write_file_bytes(path, out);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::istringstream is(read_file_bytes(path));
  std::string line;
  std::vector<MetricsRow> rows;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      continue;
    }
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 9) throw ConfigError("malformed metrics row");
    MetricsRow r;
    r.iter = std::stoll(f[0]);
    r.total = std::stod(f[1]);
    r.action = std::stod(f[2]);
    r.recon3d = std::stod(f[3]);
    r.recon4d = std::stod(f[4]);
    r.lambda_3d = std::stod(f[5]);
    r.lambda_4d = std::stod(f[6]);
    r.lr = std::stod(f[7]);
    r.wallclock = std::stod(f[8]);
    rows.push_back(r);
  }
  return rows;
}

TrainResult train(const DemoDataset& data, const TrainConfig& cfg, const std::string& out_dir,
                  bool resume) {
  cfg.validate();
  if (data.episodes.empty()) throw ContractError("empty dataset");
  const PipelineConfig pipe = resolved_pipeline(cfg);
  fs::create_directories(out_dir);

  Registry reg;
  RngStream init_rng(derive_seed(cfg.seed, "init", 0));
  Dp4Policy policy(reg, "dp4", pipe, init_rng);
  Adam opt(reg.params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  const nlohmann::json cfg_json = train_config_to_json(cfg);
  nlohmann::json fp_json = cfg_json;
  fp_json.erase("epochs");  // resume may extend the epoch budget
  const std::string fingerprint = hash_hex(config_fingerprint(fp_json));
  const std::string last_stem = out_dir + "/checkpoint_last";
  const std::string final_stem = out_dir + "/checkpoint_final";
  const std::string metrics_path = out_dir + "/metrics.csv";

  int64_t global_step = 0;
  int start_epoch = 0;
  if (resume) {
    LoadedCheckpoint ck = load_checkpoint(last_stem);
    if (ck.meta.value("format", -1) != kCheckpointFormatVersion)
      throw ConfigError("checkpoint format version mismatch");
    if (ck.meta.value("config_hash", std::string()) != fingerprint)
      throw StateError("config fingerprint mismatch on resume");
    policy.diffusion().verify_mode_tag(ck.meta.at("prediction_mode").get<std::string>());
    restore_params(reg, ck);
    restore_optimizer(opt, ck);
    global_step = ck.meta.at("step").get<int64_t>();
    start_epoch = ck.meta.at("epoch").get<int>();
  }

  struct SampleRef {
    int ep;
    int t;
  };
  std::vector<SampleRef> samples;
  for (int e = 0; e < static_cast<int>(data.episodes.size()); ++e) {
    const int len = static_cast<int>(data.episodes[e].steps.size());
    for (int t = 0; t + 1 < len; ++t) samples.push_back({e, t});
  }
  if (samples.empty()) throw ContractError("dataset has no trainable transitions");

  auto meta_for = [&](int epoch_done) {
    nlohmann::json meta{{"format", kCheckpointFormatVersion},
                        {"kind", "train"},
                        {"code_version", kCodeVersion},
                        {"config", cfg_json},
                        {"config_hash", fingerprint},
                        {"epoch", epoch_done},
                        {"step", global_step},
                        {"prediction_mode", mode_name(pipe.diffusion.denoiser.mode)},
                        {"task", task_name(data.task)},
                        {"env", env_to_json(data.env)},
                        {"camera", camera_to_json(data.cam)},
                        {"action_norm", normalizer_to_json(data.action_norm)},
                        {"state_norm", normalizer_to_json(data.state_norm)}};
    return meta;
  };
  auto save = [&](const std::string& stem, int epoch_done) {
    std::vector<NamedTensor> tensors = snapshot_params(reg);
    std::vector<NamedTensor> slots = snapshot_optimizer(opt);
    tensors.insert(tensors.end(), slots.begin(), slots.end());
    save_checkpoint(stem, tensors, meta_for(epoch_done));
  };

  bool frozen = false;
  reg.set_frozen(policy.deform_prefix(), true);
  frozen = true;
  auto sync_freeze = [&]() {
    const bool want = !cfg.use_dynamics || global_step < cfg.warmup_iters;
    if (want != frozen) {
      reg.set_frozen(policy.deform_prefix(), want);
      frozen = want;
    }
  };

  std::vector<MetricsRow> rows;
  if (resume && fs::exists(metrics_path)) {
    for (const MetricsRow& r : read_metrics_csv(metrics_path))
      if (r.iter < global_step) rows.push_back(r);
  }
  if (!resume) save(last_stem, 0);

  TrainResult res;
  res.metrics_path = metrics_path;
  res.checkpoint_stem = last_stem;
  const auto t0 = std::chrono::steady_clock::now();
  bool aborted = false;
  bool first_epoch_recorded = resume;
  for (int epoch = start_epoch; epoch < cfg.epochs && !aborted; ++epoch) {
    std::vector<SampleRef> order = samples;
    RngStream erng(derive_seed(cfg.seed, "epoch", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[erng.uniform_int(i)]);

    double esum = 0.0;
    int64_t en = 0;
    for (size_t start = 0; start < order.size() && !aborted; start += cfg.batch) {
      const size_t n = std::min<size_t>(cfg.batch, order.size() - start);
      sync_freeze();
      RngStream srng(derive_seed(cfg.seed, "step", static_cast<uint64_t>(global_step)));
      std::vector<BatchSample> batch(n);
      for (size_t i = 0; i < n; ++i) {
        const SampleRef& ref = order[start + i];
        BatchSample& b = batch[i];
        b.episode = &data.episodes[static_cast<size_t>(ref.ep)];
        b.t = ref.t;
        b.k = 1 + static_cast<int>(srng.uniform_int(pipe.diffusion.k_train));
        b.eps.resize(static_cast<size_t>(pipe.chunk.horizon) * pipe.action_dim);
        for (float& v : b.eps) v = static_cast<float>(srng.normal());
        const uint64_t tag = static_cast<uint64_t>(global_step) * 4096 + i;
        b.fps_seed = derive_seed(cfg.seed, "fps", tag);
        b.future_seed = derive_seed(cfg.seed, "future", tag);
      }
      reg.zero_grads();
      try {
        LossParts parts = joint_loss(policy, data, batch, cfg.recon_per_batch, cfg);
        const double total = parts.total.item();
        if (!std::isfinite(total)) throw NumericalError("non-finite loss");
        backward(parts.total);
        opt.step();
        const double wall =
            cfg.deterministic
                ? 0.0
                : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({global_step, total, parts.action, parts.recon3d, parts.recon4d,
                        cfg.lambda_3d, cfg.lambda_4d, cfg.lr, wall});
        esum += parts.action;
        ++en;
        ++global_step;
      } catch (const NumericalError&) {
        aborted = true;
        if (params_finite(reg)) save(last_stem, epoch);
      }
    }
    if (!aborted) {
      ++res.epochs_run;
      if (en > 0) {
        if (!first_epoch_recorded) {
          res.first_epoch_action = esum / en;
          first_epoch_recorded = true;
        }
        res.final_epoch_action = esum / en;
      }
      if ((epoch + 1) % cfg.checkpoint_every == 0) save(last_stem, epoch + 1);
    }
  }

  res.steps = global_step;
  res.status = aborted ? TrainStatus::kNumericalAbort : TrainStatus::kCompleted;
  if (!aborted) {
    save(last_stem, cfg.epochs);
    save(final_stem, cfg.epochs);
    res.checkpoint_stem = final_stem;
  }
  write_metrics_csv(metrics_path, rows);

  nlohmann::json manifest{
      {"kind", "train_run"},
      {"code_version", kCodeVersion},
      {"seed", cfg.seed},
      {"config", cfg_json},
      {"config_hash", fingerprint},
      {"status", aborted ? "numerical_abort" : "completed"},
      {"epochs_run", res.epochs_run},
      {"steps", res.steps},
      {"first_epoch_action", res.first_epoch_action},
      {"final_epoch_action", res.final_epoch_action},
      {"dataset",
       {{"task", task_name(data.task)},
        {"episodes", data.episodes.size()},
        {"steps", data.total_steps()}}},
      {"formats",
       {{"checkpoint", kCheckpointFormatVersion}, {"demo", kDemoFormatVersion}}}};
  write_file_bytes(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  return res;
}

PolicyBundle load_policy(const std::string& stem) {
  LoadedCheckpoint ck = load_checkpoint(stem);
  if (ck.meta.value("format", -1) != kCheckpointFormatVersion)
    throw ConfigError("checkpoint format version mismatch");
  PolicyBundle b;
  b.cfg = train_config_from_json(ck.meta.at("config"));
  RngStream rng(0);
  b.policy = Dp4Policy(b.reg, "dp4", resolved_pipeline(b.cfg), rng);
  b.policy.diffusion().verify_mode_tag(ck.meta.at("prediction_mode").get<std::string>());
  restore_params(b.reg, ck);
  b.task = task_from_name(ck.meta.at("task").get<std::string>());
  b.env = env_from_json(ck.meta.at("env"));
  b.cam = camera_from_json(ck.meta.at("camera"));
  b.action_norm = normalizer_from_json(ck.meta.at("action_norm"));
  b.state_norm = normalizer_from_json(ck.meta.at("state_norm"));
  b.step = ck.meta.at("step").get<int64_t>();
  b.epoch = ck.meta.at("epoch").get<int>();
  return b;
}

EvalReport evaluate_policy(const Dp4Policy& policy, const Camera& cam,
                           const Normalizer& action_norm, const Normalizer& state_norm,
                           TaskKind task, int episodes, uint64_t seed, const EnvConfig& env) {
  if (episodes < 1) throw ContractError("need at least one evaluation episode");
  ChunkedController ctl(policy, cam, action_norm, state_norm, derive_seed(seed, "controller", 0));
  EvalReport rep;
  int succ = 0;
  int64_t steps_sum = 0;
  for (int e = 0; e < episodes; ++e) {
    const uint64_t ep_seed = derive_seed(seed, "episode", static_cast<uint64_t>(e));
    RngStream rng(ep_seed);
    Scene scene = random_scene(task, rng, env);
    bool ok = task_success(scene, task, env);
    int used = 0;
    for (int step = 0; step < env.max_steps && !ok; ++step) {
      Vec3d a = ctl.act(scene, step);
      const double n = a.norm();
      if (n > env.v_max && n > 0.0) a = a * (env.v_max / n);
      scene = env_step(scene, a, env);
      ++used;
      ok = task_success(scene, task, env);
    }
    rep.episodes.push_back({ep_seed, ok, used});
    if (ok) ++succ;
    steps_sum += used;
  }
  rep.success_rate = static_cast<double>(succ) / episodes;
  rep.mean_steps = static_cast<double>(steps_sum) / episodes;
  return rep;
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json eps = nlohmann::json::array();
  for (const EvalEpisode& e : report.episodes)
    eps.push_back({{"seed", e.seed}, {"success", e.success}, {"steps", e.steps}});
  return {{"success_rate", report.success_rate},
          {"mean_steps", report.mean_steps},
          {"episodes", eps}};
}

std::vector<AblationCell> default_ablation_cells() {
  return {{"none", false, false, false},
          {"rgbd", true, true, false},
          {"rgbd_dyn", true, true, true}};
}

std::vector<AblationRow> ablate(const DemoDataset& data, const TrainConfig& base,
                                const std::vector<AblationCell>& cells,
                                const std::vector<uint64_t>& seeds, int eval_episodes,
                                uint64_t eval_seed, const std::string& out_dir) {
  if (cells.empty()) throw ContractError("empty ablation matrix");
  if (seeds.empty()) throw ContractError("need at least one seed");
  fs::create_directories(out_dir);
  std::vector<AblationRow> rows;
  for (const AblationCell& cell : cells) {
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.use_rgb_3d = cell.use_rgb_3d;
      cfg.use_depth_3d = cell.use_depth_3d;
      cfg.use_dynamics = cell.use_dynamics;
      cfg.seed = seed;
      const std::string dir = out_dir + "/" + cell.name + "_s" + std::to_string(seed);
      TrainResult r = train(data, cfg, dir, false);
      if (r.status != TrainStatus::kCompleted)
        throw NumericalError("ablation cell '" + cell.name + "' aborted");
      PolicyBundle b = load_policy(r.checkpoint_stem);
      EvalReport rep = evaluate_policy(b.policy, b.cam, b.action_norm, b.state_norm, b.task,
                                       eval_episodes, eval_seed, b.env);
      std::vector<MetricsRow> metrics = read_metrics_csv(r.metrics_path);
      const MetricsRow last = metrics.empty() ? MetricsRow{} : metrics.back();
      rows.push_back({cell.name, cell.use_rgb_3d, cell.use_depth_3d, cell.use_dynamics, seed,
                      rep.success_rate, last.action, last.recon3d, last.recon4d});
    }
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::string out = "cell,use_rgb_3d,use_depth_3d,use_dynamics,seed,success,loss_action,loss_3d,loss_4d\n";
  for (const AblationRow& r : rows) {
    out += r.cell + ',' + (r.use_rgb_3d ? "1" : "0") + ',' + (r.use_depth_3d ? "1" : "0") + ',' +
           (r.use_dynamics ? "1" : "0") + ',' + std::to_string(r.seed) + ',' +
           fmt_double(r.success) + ',' + fmt_double(r.loss_action) + ',' +
           fmt_double(r.loss_3d) + ',' + fmt_double(r.loss_4d) + '\n';
  }
  write_file_bytes(path, out);
}

std::vector<SweepRow> lambda_sweep(const DemoDataset& data, const TrainConfig& base,
                                   const std::vector<double>& grid_3d,
                                   const std::vector<double>& grid_4d, int eval_episodes,
                                   uint64_t eval_seed, const std::string& out_dir) {
  if (grid_3d.empty() || grid_4d.empty()) throw ContractError("empty sweep grid");
  fs::create_directories(out_dir);
  std::vector<SweepRow> rows;
  for (double l3 : grid_3d) {
    for (double l4 : grid_4d) {
      TrainConfig cfg = base;
      cfg.lambda_3d = l3;
      cfg.lambda_4d = l4;
      char name[64];
      std::snprintf(name, sizeof(name), "l3_%g_l4_%g", l3, l4);
      const std::string dir = out_dir + "/" + name;
      TrainResult r = train(data, cfg, dir, false);
      if (r.status != TrainStatus::kCompleted)
        throw NumericalError(std::string("sweep cell '") + name + "' aborted");
      PolicyBundle b = load_policy(r.checkpoint_stem);
      EvalReport rep = evaluate_policy(b.policy, b.cam, b.action_norm, b.state_norm, b.task,
                                       eval_episodes, eval_seed, b.env);
      std::vector<MetricsRow> metrics = read_metrics_csv(r.metrics_path);
      const MetricsRow last = metrics.empty() ? MetricsRow{} : metrics.back();
      rows.push_back({l3, l4, cfg.seed, rep.success_rate, last.action});
    }
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::string out = "lambda_3d,lambda_4d,seed,success,loss_action\n";
  for (const SweepRow& r : rows) {
    out += fmt_double(r.lambda_3d) + ',' + fmt_double(r.lambda_4d) + ',' +
           std::to_string(r.seed) + ',' + fmt_double(r.success) + ',' +
           fmt_double(r.loss_action) + '\n';
  }
  write_file_bytes(path, out);
}

}  // namespace gswm
