// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "gswm/gradcheck.hpp"
#include "gswm/pointcloud.hpp"
#include "gswm/rng.hpp"

using namespace gswm;

namespace {

Camera identity_camera(int w, int h, double f) {
  Camera cam;
  cam.fx = cam.fy = f;
  cam.cx = 0.5 * (w - 1);
  cam.cy = 0.5 * (h - 1);
  cam.width = w;
  cam.height = h;
  cam.near_clip = 0.05;
  cam.far_clip = 10.0;
  return cam;
}

PointCloud line_cloud(const std::vector<double>& xs) {
  PointCloud pc;
  for (double x : xs) {
    pc.xyz.push_back(static_cast<float>(x));
    pc.xyz.push_back(0.0f);
    pc.xyz.push_back(0.0f);
  }
  return pc;
}

FeatureVolume make_volume(int r, int c, std::vector<float> data, Box bounds) {
  FeatureVolume vol;
  vol.R = r;
  vol.C = c;
  vol.bounds = bounds;
  vol.values = Tensor::param("vol", {r * r * r, c}, std::move(data));
  return vol;
}

constexpr Box kUnitBox{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};

}  // namespace

TEST_CASE("unproject maps pixel and depth through the pinhole model") {
  const Camera cam = identity_camera(3, 3, 10.0);
  std::vector<float> depth(9, 0.0f);
  depth[4] = 2.0f;  // center pixel (1,1)
  depth[5] = 2.0f;  // pixel (2,1)
  const PointCloud pc = unproject({}, depth, cam);
  REQUIRE(pc.size() == 2);
  CHECK(!pc.has_color());
  CHECK(pc.point(0).x == 0.0);
  CHECK(pc.point(0).y == 0.0);
  CHECK(pc.point(0).z == doctest::Approx(2.0));
  CHECK(pc.point(1).x == doctest::Approx(0.2));
  CHECK(pc.point(1).y == 0.0);
  CHECK(pc.point(1).z == doctest::Approx(2.0));
}

TEST_CASE("unproject skips nonpositive depth and carries colors") {
  const Camera cam = identity_camera(2, 2, 5.0);
  const std::vector<float> depth{1.0f, 0.0f, -1.0f, 3.0f};
  const std::vector<float> rgb{0.1f, 0.2f, 0.3f, 0.0f, 0.0f, 0.0f,
                               0.0f, 0.0f, 0.0f, 0.7f, 0.8f, 0.9f};
  const PointCloud pc = unproject(rgb, depth, cam);
  REQUIRE(pc.size() == 2);
  REQUIRE(pc.has_color());
  CHECK(pc.rgb[0] == doctest::Approx(0.1f));
  CHECK(pc.rgb[5] == doctest::Approx(0.9f));
  CHECK(pc.point(0).z == doctest::Approx(1.0));
  CHECK(pc.point(1).z == doctest::Approx(3.0));
}

TEST_CASE("unproject inverts the camera transform for a posed camera") {
  const Camera cam = Camera::look_at({0.5, -0.75, 0.85}, {0.5, 0.5, 0.15}, {0.0, 0.0, 1.0},
                                     55.0, 8, 6, 0.05, 3.0);
  std::vector<float> depth(48, 0.0f);
  const int ix = 5, iy = 2;
  const double d = 1.25;
  depth[static_cast<size_t>(iy) * 8 + ix] = static_cast<float>(d);
  const PointCloud pc = unproject({}, depth, cam);
  REQUIRE(pc.size() == 1);
  const Vec3d back = cam.world_to_camera(pc.point(0));
  CHECK(back.x == doctest::Approx((ix - cam.cx) / cam.fx * d).epsilon(1e-5));
  CHECK(back.y == doctest::Approx((iy - cam.cy) / cam.fy * d).epsilon(1e-5));
  CHECK(back.z == doctest::Approx(d).epsilon(1e-6));
  CHECK(back.x / back.z * cam.fx + cam.cx == doctest::Approx(ix).epsilon(1e-5));
  CHECK(back.y / back.z * cam.fy + cam.cy == doctest::Approx(iy).epsilon(1e-5));
}

TEST_CASE("unproject rejects degenerate rotations and size mismatches") {
  Camera cam = identity_camera(2, 2, 5.0);
  const std::vector<float> depth(4, 1.0f);
  cam.rot.m[0] = 0.0;
  CHECK_THROWS_AS(unproject({}, depth, cam), ConfigError);
  cam.rot = Mat3::identity();
  const std::vector<float> short_depth(3, 1.0f);
  CHECK_THROWS_AS(unproject({}, short_depth, cam), DimensionError);
  const std::vector<float> short_rgb(6, 0.0f);
  CHECK_THROWS_AS(unproject(short_rgb, depth, cam), DimensionError);
}

TEST_CASE("crop keeps min-inclusive max-exclusive membership") {
  PointCloud pc;
  const std::vector<Vec3d> pts{{0.0, 0.0, 0.0},      // on min corner: kept
                               {1.0, 0.5, 0.5},      // on max face: dropped
                               {0.999, 0.5, 0.5},    // inside
                               {-1e-6, 0.5, 0.5},    // below min: dropped
                               {0.5, 0.5, 0.5}};     // inside
  for (size_t i = 0; i < pts.size(); ++i) {
    pc.xyz.push_back(static_cast<float>(pts[i].x));
    pc.xyz.push_back(static_cast<float>(pts[i].y));
    pc.xyz.push_back(static_cast<float>(pts[i].z));
    pc.rgb.push_back(static_cast<float>(i));
    pc.rgb.push_back(0.0f);
    pc.rgb.push_back(0.0f);
  }
  const PointCloud out = crop(pc, kUnitBox);
  REQUIRE(out.size() == 3);
  CHECK(out.rgb[0] == doctest::Approx(0.0f));
  CHECK(out.rgb[3] == doctest::Approx(2.0f));
  CHECK(out.rgb[6] == doctest::Approx(4.0f));
  const PointCloud again = crop(out, kUnitBox);
  CHECK(again.xyz == out.xyz);
  CHECK(again.rgb == out.rgb);
}

TEST_CASE("farthest point sampling follows the greedy min-distance rule") {
  const PointCloud pc = line_cloud({0.0, 1.0, 2.0, 3.0, 10.0});
  const std::vector<size_t> picked = fps_greedy_from(pc, 0, 3);
  REQUIRE(picked.size() == 3);
  CHECK(picked[0] == 0);
  CHECK(picked[1] == 4);  // x = 10, farthest from 0
  CHECK(picked[2] == 3);  // x = 3, min-distance argmax after {0, 10}
}

TEST_CASE("farthest point sampling breaks argmax ties by lowest index") {
  std::vector<double> xs(100);
  for (int i = 0; i < 100; ++i) xs[static_cast<size_t>(i)] = i;
  const PointCloud pc = line_cloud(xs);
  const std::vector<size_t> picked = fps_greedy_from(pc, 0, 3);
  CHECK(picked[0] == 0);
  CHECK(picked[1] == 99);
  CHECK(picked[2] == 49);  // 49 and 50 tie at min-d2 2401; lowest index wins
}

TEST_CASE("farthest point sampling passes small clouds through unchanged") {
  PointCloud pc = line_cloud({0.0, 5.0, 9.0});
  pc.rgb = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const PointCloud out = farthest_point_sample(pc, 8, 42);
  CHECK(out.xyz == pc.xyz);
  CHECK(out.rgb == pc.rgb);
  CHECK(farthest_point_sample({}, 4, 42).size() == 0);
}

TEST_CASE("farthest point sampling is seeded and yields a subset") {
  RngStream rng(7);
  PointCloud pc;
  for (int i = 0; i < 60; ++i) {
    pc.xyz.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
    pc.xyz.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
    pc.xyz.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
  }
  const PointCloud a = farthest_point_sample(pc, 12, 123);
  const PointCloud b = farthest_point_sample(pc, 12, 123);
  CHECK(a.xyz == b.xyz);
  REQUIRE(a.size() == 12);
  std::set<std::array<float, 3>> input_pts;
  for (size_t i = 0; i < pc.size(); ++i) {
    input_pts.insert({pc.xyz[3 * i], pc.xyz[3 * i + 1], pc.xyz[3 * i + 2]});
  }
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(input_pts.count({a.xyz[3 * i], a.xyz[3 * i + 1], a.xyz[3 * i + 2]}) == 1);
  }
}

TEST_CASE("farthest point sampling spreads picks wider than a prefix subset") {
  RngStream rng(11);
  PointCloud pc;
  for (int i = 0; i < 200; ++i) {
    pc.xyz.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
    pc.xyz.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
    pc.xyz.push_back(static_cast<float>(rng.uniform(0.0, 1.0)));
  }
  auto min_pair_d2 = [](const PointCloud& s) {
    double best = 1e30;
    for (size_t i = 0; i < s.size(); ++i) {
      for (size_t j = i + 1; j < s.size(); ++j) {
        const Vec3d d = s.point(i) - s.point(j);
        best = std::min(best, d.dot(d));
      }
    }
    return best;
  };
  PointCloud prefix;
  prefix.xyz.assign(pc.xyz.begin(), pc.xyz.begin() + 16 * 3);
  const PointCloud fps = farthest_point_sample(pc, 16, 5);
  CHECK(min_pair_d2(fps) > min_pair_d2(prefix));
}

TEST_CASE("voxelize floors points into cells and averages colors") {
  PointCloud pc;
  auto push = [&pc](double x, double y, double z, float r, float g, float b) {
    pc.xyz.push_back(static_cast<float>(x));
    pc.xyz.push_back(static_cast<float>(y));
    pc.xyz.push_back(static_cast<float>(z));
    pc.rgb.push_back(r);
    pc.rgb.push_back(g);
    pc.rgb.push_back(b);
  };
  push(0.75, 0.75, 0.75, 1.0f, 0.0f, 0.0f);
  push(0.9, 0.6, 0.55, 0.0f, 1.0f, 0.0f);   // same cell (1,1,1)
  push(0.5, 0.5, 0.5, 0.0f, 0.0f, 1.0f);    // boundary floors up into (1,1,1)
  push(0.25, 0.25, 0.25, 0.5f, 0.5f, 0.5f);  // cell (0,0,0)
  push(1.5, 0.5, 0.5, 1.0f, 1.0f, 1.0f);     // outside: dropped
  const VoxelGrid grid = voxelize(pc, kUnitBox, 2);
  REQUIRE(grid.occupancy.size() == 8);
  CHECK(grid.cell_index(1, 1, 1) == 7);
  CHECK(grid.occupancy[7] == 1.0f);
  CHECK(grid.occupancy[0] == 1.0f);
  CHECK(grid.counts[7] == 3);
  CHECK(grid.counts[0] == 1);
  int occupied = 0;
  for (float o : grid.occupancy) occupied += o > 0.0f;
  CHECK(occupied == 2);
  CHECK(grid.color[7 * 3 + 0] == doctest::Approx(1.0 / 3.0));
  CHECK(grid.color[7 * 3 + 1] == doctest::Approx(1.0 / 3.0));
  CHECK(grid.color[7 * 3 + 2] == doctest::Approx(1.0 / 3.0));
  CHECK(grid.color[0] == doctest::Approx(0.5f));
  CHECK(grid.color[3 * 3] == 0.0f);
}

TEST_CASE("voxelize of an empty cloud yields an all-zero grid") {
  const VoxelGrid grid = voxelize({}, kUnitBox, 4);
  CHECK(grid.occupancy.size() == 64);
  CHECK(std::all_of(grid.occupancy.begin(), grid.occupancy.end(),
                    [](float v) { return v == 0.0f; }));
  CHECK(std::all_of(grid.counts.begin(), grid.counts.end(), [](int v) { return v == 0; }));
}

TEST_CASE("voxel grid geometry helpers") {
  VoxelGrid grid;
  grid.R = 2;
  grid.bounds = kUnitBox;
  const Vec3d s = grid.cell_size();
  CHECK(s.x == doctest::Approx(0.5));
  const Vec3d c0 = grid.cell_center(0, 0, 0);
  CHECK(c0.x == doctest::Approx(0.25));
  CHECK(c0.y == doctest::Approx(0.25));
  CHECK(c0.z == doctest::Approx(0.25));
  const Vec3d c7 = grid.cell_center(1, 1, 1);
  CHECK(c7.x == doctest::Approx(0.75));
}

TEST_CASE("trilinear sampling is exact at cell centers and constant volumes") {
  std::vector<float> vals(8);
  for (int i = 0; i < 8; ++i) vals[static_cast<size_t>(i)] = static_cast<float>(i);
  const FeatureVolume vol = make_volume(2, 1, vals, kUnitBox);
  VoxelGrid geom;
  geom.R = 2;
  geom.bounds = kUnitBox;
  for (int iz = 0; iz < 2; ++iz) {
    for (int iy = 0; iy < 2; ++iy) {
      for (int ix = 0; ix < 2; ++ix) {
        const auto out = trilinear_sample(vol, geom.cell_center(ix, iy, iz));
        CHECK(out[0] == doctest::Approx(geom.cell_index(ix, iy, iz)).epsilon(1e-12));
      }
    }
  }
  const FeatureVolume flat = make_volume(2, 2, std::vector<float>(16, 3.5f), kUnitBox);
  for (const Vec3d& q : std::vector<Vec3d>{{0.1, 0.9, 0.4}, {-5.0, 0.5, 0.5}, {2.0, 2.0, 2.0}}) {
    const auto out = trilinear_sample(flat, q);
    CHECK(out[0] == doctest::Approx(3.5));
    CHECK(out[1] == doctest::Approx(3.5));
  }
}

TEST_CASE("trilinear sampling matches the explicit eight-corner sum") {
  std::vector<float> vals(8);
  for (int i = 0; i < 8; ++i) vals[static_cast<size_t>(i)] = static_cast<float>(i);
  const FeatureVolume vol = make_volume(2, 1, vals, kUnitBox);
  // Query at fractional offsets (0.25, 0.5, 0.75) between the two cell
  // centers per axis; expected value is 4*0.75 + 2*0.5 + 0.25.
  const auto out = trilinear_sample(vol, {0.375, 0.5, 0.625});
  CHECK(out[0] == doctest::Approx(4.25));
}

TEST_CASE("trilinear sampling is linear along one axis") {
  std::vector<float> vals(8, 0.0f);
  // Varies only with ix: value = 2*ix.
  for (int iz = 0; iz < 2; ++iz) {
    for (int iy = 0; iy < 2; ++iy) {
      for (int ix = 0; ix < 2; ++ix) {
        vals[static_cast<size_t>((iz * 2 + iy) * 2 + ix)] = static_cast<float>(2 * ix);
      }
    }
  }
  const FeatureVolume vol = make_volume(2, 1, vals, kUnitBox);
  for (double t : {0.0, 0.3, 0.5, 0.7, 1.0}) {
    const double x = 0.25 + 0.5 * t;
    const auto out = trilinear_sample(vol, {x, 0.4, 0.6});
    CHECK(out[0] == doctest::Approx(2.0 * t).epsilon(1e-6));
  }
}

TEST_CASE("trilinear sampling clamps out-of-bounds queries to boundary cells") {
  std::vector<float> vals(27);
  for (int i = 0; i < 27; ++i) vals[static_cast<size_t>(i)] = static_cast<float>(i * i);
  const FeatureVolume vol = make_volume(3, 1, vals, kUnitBox);
  CHECK(trilinear_sample(vol, {-10.0, -10.0, -10.0})[0] == 0.0);
  CHECK(trilinear_sample(vol, {10.0, 10.0, 10.0})[0] == doctest::Approx(26.0 * 26.0));
  CHECK(trilinear_sample(vol, {-10.0, 0.5, 10.0})[0] ==
        trilinear_sample(vol, {0.0, 0.5, 0.999999})[0]);
}

TEST_CASE("trilinear gather matches per-query sampling and is differentiable") {
  RngStream rng(3);
  std::vector<float> vals(27 * 4);
  for (float& v : vals) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const FeatureVolume vol = make_volume(3, 4, vals, kUnitBox);
  std::vector<Vec3d> queries;
  for (int i = 0; i < 9; ++i) {
    queries.push_back({rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)});
  }
  Tensor gathered = trilinear_gather(vol, queries);
  REQUIRE(gathered.dim(0) == 9);
  REQUIRE(gathered.dim(1) == 4);
  for (size_t i = 0; i < queries.size(); ++i) {
    const auto ref = trilinear_sample(vol, queries[i]);
    for (int c = 0; c < 4; ++c) {
      CHECK(gathered.data()[i * 4 + static_cast<size_t>(c)] == doctest::Approx(ref[static_cast<size_t>(c)]).epsilon(1e-6));
    }
  }
  auto forward = [&]() { return sum_all(mul(trilinear_gather(vol, queries),
                                            trilinear_gather(vol, queries))); };
  const FdReport rep = finite_diff_check(forward, {vol.values});
  CHECK(rep.within(2e-4, 1e-3));
}
