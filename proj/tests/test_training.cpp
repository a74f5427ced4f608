// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "gswm/errors.hpp"
#include "gswm/training.hpp"

using namespace gswm;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_pipeline() {
  PipelineConfig p;
  p.chunk = {4, 2, 3};
  p.grid_resolution = 8;
  p.query_cap = 16;
  p.local = {16, 16, {8, 8, 16}};
  p.global = {4, {4, 4, 8, 8}, 8};
  p.state = {0, 8, 8};
  p.condition = {16, 8, 8, 8};
  p.world = {{8, 8, 8, 1, 1e-4, 0.2}, {3, 8, 1, false}, 1.0, true, true};
  p.diffusion = {{4, 3, 32, 6, 16, 1, 8, PredictionMode::kSample}, 100, 10, 0.0};
  return p;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.pipeline = tiny_pipeline();
  cfg.batch = 8;
  cfg.epochs = 2;
  cfg.warmup_iters = 0;
  cfg.recon_per_batch = 2;
  cfg.checkpoint_every = 2;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  return cfg;
}

Camera straight_camera(int w, int h) {
  Camera cam;
  cam.fx = cam.fy = static_cast<double>(w);
  cam.cx = 0.5 * (w - 1);
  cam.cy = 0.5 * (h - 1);
  cam.width = w;
  cam.height = h;
  cam.near_clip = 0.01;
  cam.far_clip = 10.0;
  return cam;
}

DemoDataset toy_data(int episodes, int len, int w, int h) {
  DemoDataset ds;
  ds.task = TaskKind::kReach;
  ds.env.image_width = w;
  ds.env.image_height = h;
  ds.cam = straight_camera(w, h);
  std::vector<std::vector<float>> arows, srows;
  for (int e = 0; e < episodes; ++e) {
    DemoEpisode ep;
    ep.seed = 100 + e;
    for (int t = 0; t < len; ++t) {
      DemoRecord r;
      r.t = t;
      r.rgb.assign(static_cast<size_t>(w) * h * 3, 0.0f);
      r.depth.assign(static_cast<size_t>(w) * h, 0.0f);
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int ix = w / 2 + dx;
          const int iy = h / 2 + dy;
          const size_t pix = static_cast<size_t>(iy) * w + ix;
          r.depth[pix] = 0.4f + 0.02f * t + 0.01f * e;
          r.rgb[pix * 3 + 0] = 0.3f + 0.1f * dx;
          r.rgb[pix * 3 + 1] = 0.5f;
          r.rgb[pix * 3 + 2] = 0.2f + 0.1f * dy;
        }
      }
      r.state = {0.05f * t, 0.01f * e, 0.3f};
      r.action = {0.05f, 0.01f * (t % 2), -0.02f + 0.005f * t};
      arows.push_back({r.action[0], r.action[1], r.action[2]});
      srows.push_back({r.state[0], r.state[1], r.state[2]});
      ep.steps.push_back(std::move(r));
    }
    ds.episodes.push_back(std::move(ep));
  }
  ds.action_norm = fit_normalizer(arows);
  ds.state_norm = fit_normalizer(srows);
  return ds;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(dir);
  return dir;
}

bool tensor_group_equal(const Registry& ref, const LoadedCheckpoint& ck,
                        const std::string& prefix) {
  const std::vector<Tensor> group = ref.with_prefix(prefix);
  REQUIRE(!group.empty());
  for (const Tensor& p : group) {
    const NamedTensor* t = ck.find(p.name());
    REQUIRE(t != nullptr);
    if (t->data.size() != p.data().size()) return false;
    if (std::memcmp(t->data.data(), p.data().data(), t->data.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("train config survives a json round trip and fingerprints changes") {
  TrainConfig cfg = tiny_train_config();
  cfg.lambda_3d = 0.25;
  cfg.lambda_4d = 0.002;
  cfg.use_depth_3d = false;
  cfg.future_from_policy = true;
  cfg.pipeline.diffusion.denoiser.mode = PredictionMode::kEpsilon;
  cfg.pipeline.global.channels = {2, 4, 6, 8};
  cfg.pipeline.bounds = Box{{-0.4, -0.3, 0.1}, {0.4, 0.3, 0.9}};

  nlohmann::json j = train_config_to_json(cfg);
  TrainConfig back = train_config_from_json(j);
  CHECK(back.lambda_3d == cfg.lambda_3d);
  CHECK(back.use_depth_3d == cfg.use_depth_3d);
  CHECK(back.future_from_policy == cfg.future_from_policy);
  CHECK(back.pipeline.diffusion.denoiser.mode == PredictionMode::kEpsilon);
  CHECK(back.pipeline.global.channels == cfg.pipeline.global.channels);
  CHECK(back.pipeline.bounds.min.x == cfg.pipeline.bounds.min.x);
  CHECK(config_fingerprint(train_config_to_json(back)) == config_fingerprint(j));

  TrainConfig other = cfg;
  other.lr = 2e-3;
  CHECK(config_fingerprint(train_config_to_json(other)) != config_fingerprint(j));
}

TEST_CASE("pipeline wiring derives dependent widths and rejects bad shapes") {
  PipelineConfig p = tiny_pipeline();
  p.local.out_width = 24;
  p.global.out_channels = 12;
  p.state.out_width = 10;
  PipelineConfig w = wire_pipeline(p);
  CHECK(w.condition.local_width == 24);
  CHECK(w.condition.volume_channels == 12);
  CHECK(w.condition.state_width == 10);
  CHECK(w.world.regressor.feature_channels == 12);
  CHECK(w.diffusion.denoiser.cond_dim == w.condition.width());
  CHECK(w.diffusion.denoiser.state_dim == w.chunk.n_obs * w.state_dim);
  CHECK(w.diffusion.denoiser.horizon == w.chunk.horizon);
  CHECK(w.state.in_dim == w.chunk.n_obs * w.state_dim);

  PipelineConfig bad = tiny_pipeline();
  bad.grid_resolution = 12;
  CHECK_THROWS_AS(wire_pipeline(bad), ConfigError);
  bad = tiny_pipeline();
  bad.chunk = {5, 2, 3};
  CHECK_THROWS_AS(wire_pipeline(bad), ConfigError);
  bad = tiny_pipeline();
  bad.query_cap = 0;
  CHECK_THROWS_AS(wire_pipeline(bad), ConfigError);
  bad = tiny_pipeline();
  bad.action_dim = 0;
  CHECK_THROWS_AS(wire_pipeline(bad), ConfigError);
}

TEST_CASE("chunk and state windows clamp to the episode and normalize") {
  DemoEpisode ep;
  for (int t = 0; t < 4; ++t) {
    DemoRecord r;
    r.t = t;
    r.action = {static_cast<float>(t), static_cast<float>(2 * t), static_cast<float>(3 * t)};
    r.state = {static_cast<float>(t), static_cast<float>(t), static_cast<float>(t)};
    ep.steps.push_back(r);
  }
  Normalizer anorm({0.0, 0.0, 0.0}, {3.0, 6.0, 9.0});
  Normalizer snorm({0.0, 0.0, 0.0}, {3.0, 3.0, 3.0});
  ChunkSpec spec{4, 2, 3};

  auto expect_norm = [](double v, double lo, double hi) {
    return 2.0 * (v - lo) / (hi - lo) - 1.0;
  };

  Tensor c0 = make_action_chunk(ep, 0, spec, anorm);
  REQUIRE(c0.dim(0) == 4);
  REQUIRE(c0.dim(1) == 3);
  const int expected_rows0[4] = {0, 0, 1, 2};
  for (int j = 0; j < 4; ++j) {
    const int src = expected_rows0[j];
    CHECK(c0.data()[j * 3 + 0] ==
          doctest::Approx(expect_norm(src, 0, 3)).epsilon(1e-6));
    CHECK(c0.data()[j * 3 + 1] ==
          doctest::Approx(expect_norm(2.0 * src, 0, 6)).epsilon(1e-6));
  }
  Tensor c3 = make_action_chunk(ep, 3, spec, anorm);
  const int expected_rows3[4] = {2, 3, 3, 3};
  for (int j = 0; j < 4; ++j)
    CHECK(c3.data()[j * 3 + 0] ==
          doctest::Approx(expect_norm(expected_rows3[j], 0, 3)).epsilon(1e-6));

  std::vector<float> s0 = make_stacked_state(ep, 0, spec, snorm);
  REQUIRE(s0.size() == 6);
  CHECK(s0[0] == s0[3]);
  std::vector<float> s2 = make_stacked_state(ep, 2, spec, snorm);
  CHECK(s2[0] == doctest::Approx(expect_norm(1, 0, 3)).epsilon(1e-6));
  CHECK(s2[3] == doctest::Approx(expect_norm(2, 0, 3)).epsilon(1e-6));

  CHECK_THROWS_AS(make_action_chunk(ep, -1, spec, anorm), ContractError);
  CHECK_THROWS_AS(make_action_chunk(ep, 4, spec, anorm), ContractError);
  DemoEpisode empty;
  CHECK_THROWS_AS(make_stacked_state(empty, 0, spec, snorm), ContractError);
}

TEST_CASE("joint loss decomposes into weighted parts and honors the flags") {
  DemoDataset data = toy_data(2, 4, 12, 12);
  TrainConfig cfg = tiny_train_config();

  Registry reg;
  RngStream init(derive_seed(cfg.seed, "init", 0));
  Dp4Policy policy(reg, "dp4", resolved_pipeline(cfg), init);

  RngStream draw(3);
  std::vector<BatchSample> batch;
  const int ks[4] = {5, 50, 99, 1};
  for (int i = 0; i < 4; ++i) {
    BatchSample b;
    b.episode = &data.episodes[i % 2];
    b.t = i % 3;
    b.k = ks[i];
    b.eps.resize(12);
    for (float& v : b.eps) v = static_cast<float>(draw.normal());
    b.fps_seed = derive_seed(7, "fps", i);
    b.future_seed = derive_seed(7, "future", i);
    batch.push_back(std::move(b));
  }

  LossParts parts = joint_loss(policy, data, batch, 2, cfg);
  CHECK(std::isfinite(parts.action));
  CHECK(parts.recon3d > 0.0);
  CHECK(parts.recon4d > 0.0);
  const double combined =
      parts.action + cfg.lambda_3d * parts.recon3d + cfg.lambda_4d * parts.recon4d;
  CHECK(std::abs(parts.total.item() - combined) <= 1e-6);

  LossParts again = joint_loss(policy, data, batch, 2, cfg);
  CHECK(again.total.item() == parts.total.item());
  CHECK(again.action == parts.action);
  CHECK(again.recon3d == parts.recon3d);
  CHECK(again.recon4d == parts.recon4d);

  TrainConfig zero = cfg;
  zero.lambda_3d = 0.0;
  zero.lambda_4d = 0.0;
  LossParts pz = joint_loss(policy, data, batch, 2, zero);
  CHECK(pz.recon3d == 0.0);
  CHECK(pz.recon4d == 0.0);
  CHECK(pz.total.item() == pz.action);

  TrainConfig off = cfg;
  off.use_rgb_3d = false;
  off.use_depth_3d = false;
  Registry reg_off;
  RngStream init_off(derive_seed(cfg.seed, "init", 0));
  Dp4Policy policy_off(reg_off, "dp4", resolved_pipeline(off), init_off);
  LossParts po = joint_loss(policy_off, data, batch, 2, off);
  CHECK(po.recon3d == 0.0);
  CHECK(po.recon4d == 0.0);
  CHECK(po.total.item() == po.action);

  std::vector<BatchSample> tail = batch;
  tail[0].t = 3;
  CHECK_THROWS_AS(joint_loss(policy, data, tail, 2, cfg), ContractError);
  CHECK_THROWS_AS(joint_loss(policy, data, {}, 2, cfg), ContractError);
}

TEST_CASE("training is bit-reproducible per seed and logs consistent rows") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);
  TrainConfig cfg = tiny_train_config();

  const std::string dir_a = fresh_dir("gswm_train_a");
  const std::string dir_b = fresh_dir("gswm_train_b");
  TrainResult ra = train(data, cfg, dir_a);
  TrainResult rb = train(data, cfg, dir_b);
  CHECK(ra.status == TrainStatus::kCompleted);
  CHECK(ra.epochs_run == cfg.epochs);
  CHECK(ra.steps == rb.steps);
  CHECK(read_file_bytes(dir_a + "/metrics.csv") == read_file_bytes(dir_b + "/metrics.csv"));
  CHECK(read_file_bytes(dir_a + "/checkpoint_final.bin") ==
        read_file_bytes(dir_b + "/checkpoint_final.bin"));

  TrainConfig other = cfg;
  other.seed = 12;
  const std::string dir_c = fresh_dir("gswm_train_c");
  train(data, other, dir_c);
  CHECK(read_file_bytes(dir_a + "/checkpoint_final.bin") !=
        read_file_bytes(dir_c + "/checkpoint_final.bin"));

  std::vector<MetricsRow> rows = read_metrics_csv(ra.metrics_path);
  REQUIRE(static_cast<int64_t>(rows.size()) == ra.steps);
  for (size_t i = 0; i < rows.size(); ++i) {
    const MetricsRow& r = rows[i];
    CHECK(r.iter == static_cast<int64_t>(i));
    CHECK(std::abs(r.total - (r.action + r.lambda_3d * r.recon3d + r.lambda_4d * r.recon4d)) <=
          1e-6);
    CHECK(r.wallclock == 0.0);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("warm-up and the dynamics flag freeze the deformation parameters") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);

  TrainConfig cfg = tiny_train_config();
  cfg.warmup_iters = 1000000;
  const std::string dir_w = fresh_dir("gswm_train_warm");
  TrainResult rw = train(data, cfg, dir_w);
  REQUIRE(rw.status == TrainStatus::kCompleted);

  Registry ref;
  RngStream init(derive_seed(cfg.seed, "init", 0));
  Dp4Policy ref_policy(ref, "dp4", resolved_pipeline(cfg), init);
  LoadedCheckpoint ck = load_checkpoint(rw.checkpoint_stem);
  CHECK(tensor_group_equal(ref, ck, "dp4.world.deform"));
  CHECK_FALSE(tensor_group_equal(ref, ck, "dp4.policy"));

  TrainConfig nodyn = tiny_train_config();
  nodyn.use_dynamics = false;
  const std::string dir_n = fresh_dir("gswm_train_nodyn");
  TrainResult rn = train(data, nodyn, dir_n);
  LoadedCheckpoint ckn = load_checkpoint(rn.checkpoint_stem);
  Registry ref_n;
  RngStream init_n(derive_seed(nodyn.seed, "init", 0));
  Dp4Policy ref_policy_n(ref_n, "dp4", resolved_pipeline(nodyn), init_n);
  CHECK(tensor_group_equal(ref_n, ckn, "dp4.world.deform"));

  TrainConfig live = tiny_train_config();
  live.warmup_iters = 0;
  const std::string dir_l = fresh_dir("gswm_train_live");
  TrainResult rl = train(data, live, dir_l);
  LoadedCheckpoint ckl = load_checkpoint(rl.checkpoint_stem);
  Registry ref_l;
  RngStream init_l(derive_seed(live.seed, "init", 0));
  Dp4Policy ref_policy_l(ref_l, "dp4", resolved_pipeline(live), init_l);
  CHECK_FALSE(tensor_group_equal(ref_l, ckl, "dp4.world.deform"));

  fs::remove_all(dir_w);
  fs::remove_all(dir_n);
  fs::remove_all(dir_l);
}

TEST_CASE("resume continues the iteration counter and matches a straight run") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);

  TrainConfig straight = tiny_train_config();
  straight.epochs = 4;
  const std::string dir_s = fresh_dir("gswm_train_straight");
  TrainResult rs = train(data, straight, dir_s);
  REQUIRE(rs.status == TrainStatus::kCompleted);

  TrainConfig half = straight;
  half.epochs = 2;
  const std::string dir_r = fresh_dir("gswm_train_resume");
  TrainResult rh = train(data, half, dir_r);
  REQUIRE(rh.steps > 0);

  TrainConfig full = straight;
  TrainResult rr = train(data, full, dir_r, true);
  CHECK(rr.status == TrainStatus::kCompleted);
  CHECK(rr.steps == rs.steps);
  CHECK(read_file_bytes(dir_r + "/metrics.csv") == read_file_bytes(dir_s + "/metrics.csv"));
  CHECK(read_file_bytes(dir_r + "/checkpoint_final.bin") ==
        read_file_bytes(dir_s + "/checkpoint_final.bin"));

  TrainConfig tweaked = full;
  tweaked.lr = 5e-4;
  CHECK_THROWS_AS(train(data, tweaked, dir_r, true), StateError);

  const std::string dir_x = fresh_dir("gswm_train_missing");
  CHECK_THROWS(train(data, full, dir_x, true));
  fs::remove_all(dir_s);
  fs::remove_all(dir_r);
  fs::remove_all(dir_x);
}

TEST_CASE("a non-finite observation aborts training with a usable checkpoint") {
  DemoDataset data = toy_data(1, 3, 12, 12);
  for (DemoRecord& r : data.episodes[0].steps) {
    const int ix = 6, iy = 6;
    r.rgb[(static_cast<size_t>(iy) * 12 + ix) * 3] = std::numeric_limits<float>::quiet_NaN();
  }
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  const std::string dir = fresh_dir("gswm_train_nan");
  TrainResult r = train(data, cfg, dir);
  CHECK(r.status == TrainStatus::kNumericalAbort);
  CHECK(r.steps == 0);
  CHECK(read_metrics_csv(r.metrics_path).empty());
  PolicyBundle b = load_policy(dir + "/checkpoint_last");
  CHECK(b.step == 0);
  nlohmann::json manifest = nlohmann::json::parse(read_file_bytes(dir + "/manifest.json"));
  CHECK(manifest.at("status") == "numerical_abort");
  fs::remove_all(dir);
}

TEST_CASE("evaluation reports are bounded, sized, and deterministic") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  const std::string dir = fresh_dir("gswm_train_eval");
  TrainResult r = train(data, cfg, dir);
  PolicyBundle b = load_policy(r.checkpoint_stem);
  CHECK(b.epoch == 1);

  EvalReport rep = evaluate_policy(b.policy, b.cam, b.action_norm, b.state_norm, b.task, 3, 77,
                                   b.env);
  CHECK(rep.episodes.size() == 3);
  CHECK(rep.success_rate >= 0.0);
  CHECK(rep.success_rate <= 1.0);
  for (const EvalEpisode& e : rep.episodes) CHECK(e.steps <= b.env.max_steps);

  EvalReport rep2 = evaluate_policy(b.policy, b.cam, b.action_norm, b.state_norm, b.task, 3, 77,
                                    b.env);
  CHECK(eval_report_to_json(rep).dump() == eval_report_to_json(rep2).dump());

  CHECK_THROWS_AS(
      evaluate_policy(b.policy, b.cam, b.action_norm, b.state_norm, b.task, 0, 77, b.env),
      ContractError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint restores verify the prediction mode and format") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 1;
  const std::string dir = fresh_dir("gswm_train_tamper");
  TrainResult r = train(data, cfg, dir);
  CHECK_NOTHROW(load_policy(r.checkpoint_stem));

  const std::string jpath = r.checkpoint_stem + ".json";
  nlohmann::json manifest = nlohmann::json::parse(read_file_bytes(jpath));
  nlohmann::json pristine = manifest;
  manifest["meta"]["prediction_mode"] = "epsilon";
  write_file_bytes(jpath, manifest.dump(2) + "\n");
  CHECK_THROWS_AS(load_policy(r.checkpoint_stem), ConfigError);

  manifest = pristine;
  manifest["meta"]["format"] = kCheckpointFormatVersion + 1;
  write_file_bytes(jpath, manifest.dump(2) + "\n");
  CHECK_THROWS_AS(load_policy(r.checkpoint_stem), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("the ablation table covers every cell with exact zeros when off") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);
  TrainConfig base = tiny_train_config();
  base.epochs = 1;

  std::vector<AblationCell> cells = {{"none", false, false, false}, {"full", true, true, true}};
  const std::string dir = fresh_dir("gswm_ablate");
  std::vector<AblationRow> rows = ablate(data, base, cells, {1}, 2, 900, dir);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].cell == "none");
  CHECK(rows[0].loss_3d == 0.0);
  CHECK(rows[0].loss_4d == 0.0);
  CHECK(rows[1].cell == "full");
  CHECK(rows[1].loss_3d > 0.0);
  for (const AblationRow& row : rows) {
    CHECK(row.success >= 0.0);
    CHECK(row.success <= 1.0);
  }
  write_ablation_csv(dir + "/table.csv", rows);
  const std::string csv = read_file_bytes(dir + "/table.csv");
  CHECK(csv.find("cell,use_rgb_3d") == 0);
  CHECK(csv.find("none,0,0,0,1,") != std::string::npos);

  CHECK_THROWS_AS(ablate(data, base, {}, {1}, 2, 900, dir), ContractError);
  CHECK_THROWS_AS(ablate(data, base, cells, {}, 2, 900, dir), ContractError);
  fs::remove_all(dir);
}

TEST_CASE("the lambda sweep emits one deterministic row per grid cell") {
  EnvConfig env;
  env.image_width = 16;
  env.image_height = 16;
  DemoDataset data = generate_demos(TaskKind::kReach, 2, 5, env);
  TrainConfig base = tiny_train_config();
  base.epochs = 1;

  const std::string dir = fresh_dir("gswm_sweep");
  std::vector<SweepRow> rows = lambda_sweep(data, base, {0.0, 0.1}, {0.01}, 2, 901, dir);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].lambda_3d == 0.0);
  CHECK(rows[1].lambda_3d == 0.1);
  CHECK(rows[0].lambda_4d == 0.01);

  std::vector<SweepRow> again = lambda_sweep(data, base, {0.0, 0.1}, {0.01}, 2, 901, dir);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].success == again[i].success);
    CHECK(rows[i].loss_action == again[i].loss_action);
  }
  write_sweep_csv(dir + "/sweep.csv", rows);
  CHECK(read_file_bytes(dir + "/sweep.csv").find("lambda_3d,lambda_4d") == 0);
  CHECK_THROWS_AS(lambda_sweep(data, base, {}, {0.01}, 2, 901, dir), ContractError);
  fs::remove_all(dir);
}
