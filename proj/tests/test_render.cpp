// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "gswm/checkpoint.hpp"
#include "gswm/gradcheck.hpp"
#include "gswm/image_io.hpp"
#include "gswm/rng.hpp"
#include "gswm/splat.hpp"

using namespace gswm;

namespace {

Camera axis_camera(int w, int h, double f) {
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

Camera posed_camera(int w, int h) {
  return Camera::look_at({0.4, -1.1, 0.6}, {0.0, 0.0, 0.3}, {0.0, 0.0, 1.0}, 45.0, w, h, 0.05,
                         5.0);
}

std::array<double, 4> random_unit_quat(RngStream& rng) {
  std::array<double, 4> q;
  double n2 = 0.0;
  for (double& v : q) {
    v = rng.normal();
    n2 += v * v;
  }
  const double n = std::sqrt(n2);
  for (double& v : q) v /= n;
  return q;
}

std::vector<GaussianPrimitive> random_scene(RngStream& rng, int n) {
  std::vector<GaussianPrimitive> gs(static_cast<size_t>(n));
  for (GaussianPrimitive& g : gs) {
    g.mu = {rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), rng.uniform(0.05, 0.55)};
    g.color = {static_cast<float>(rng.uniform(0.0, 1.0)), static_cast<float>(rng.uniform(0.0, 1.0)),
               static_cast<float>(rng.uniform(0.0, 1.0))};
    g.rot = random_unit_quat(rng);
    g.scale = {rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1)};
    g.opacity = rng.uniform(0.1, 0.9);
  }
  return gs;
}

std::vector<float> to_vec(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

bool frames_bit_equal(const RenderedFrame& a, const RenderedFrame& b) {
  return a.width == b.width && a.height == b.height &&
         a.color.size() == b.color.size() && a.depth.size() == b.depth.size() &&
         a.alpha.size() == b.alpha.size() &&
         std::memcmp(a.color.data(), b.color.data(), a.color.size() * 4) == 0 &&
         std::memcmp(a.depth.data(), b.depth.data(), a.depth.size() * 4) == 0 &&
         std::memcmp(a.alpha.data(), b.alpha.data(), a.alpha.size() * 4) == 0;
}

// Independent rasterization oracle. The rotation matrix comes from the
// identity R = (w^2 - |v|^2) I + 2 v v^T + 2 w [v]x rather than the expanded
// entry formulas, and every product goes through Mat3.
Mat3 quat_mat_oracle(const std::array<double, 4>& q) {
  const double w = q[0];
  const Vec3d v{q[1], q[2], q[3]};
  const double k = w * w - v.dot(v);
  Mat3 r;
  const double vv[9] = {v.x * v.x, v.x * v.y, v.x * v.z, v.y * v.x, v.y * v.y,
                        v.y * v.z, v.z * v.x, v.z * v.y, v.z * v.z};
  const double skew[9] = {0, -v.z, v.y, v.z, 0, -v.x, -v.y, v.x, 0};
  for (int i = 0; i < 9; ++i) {
    r.m[static_cast<size_t>(i)] = 2.0 * vv[i] + 2.0 * w * skew[i];
  }
  r.m[0] += k;
  r.m[4] += k;
  r.m[8] += k;
  return r;
}

RenderedFrame oracle_render(const std::vector<GaussianPrimitive>& gs, const Camera& cam) {
  struct Splat {
    double mu[2];
    double inv[3];  // inverse 2x2 packed (xx, xy, yy)
    double depth;
    double color[3];
    double opacity;
  };
  std::vector<Splat> splats;
  for (const GaussianPrimitive& g : gs) {
    const Vec3d pc = cam.rot * g.mu + cam.trans;
    if (pc.z <= cam.near_clip) continue;
    const Mat3 rot = quat_mat_oracle(g.rot);
    Mat3 d2;
    d2.m = {g.scale.x * g.scale.x, 0, 0, 0, g.scale.y * g.scale.y, 0, 0, 0,
            g.scale.z * g.scale.z};
    const Mat3 sig_cam =
        cam.rot * (rot * d2 * rot.transposed()) * cam.rot.transposed();
    const double jr0[3] = {cam.fx / pc.z, 0.0, -cam.fx * pc.x / (pc.z * pc.z)};
    const double jr1[3] = {0.0, cam.fy / pc.z, -cam.fy * pc.y / (pc.z * pc.z)};
    auto quad = [&sig_cam](const double a[3], const double b[3]) {
      double acc = 0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) acc += a[i] * sig_cam.m[static_cast<size_t>(i * 3 + j)] * b[j];
      }
      return acc;
    };
    const double cxx = quad(jr0, jr0) + 1e-6;
    const double cxy = quad(jr0, jr1);
    const double cyy = quad(jr1, jr1) + 1e-6;
    const double det = cxx * cyy - cxy * cxy;
    Splat s;
    s.mu[0] = cam.fx * pc.x / pc.z + cam.cx;
    s.mu[1] = cam.fy * pc.y / pc.z + cam.cy;
    s.inv[0] = cyy / det;
    s.inv[1] = -cxy / det;
    s.inv[2] = cxx / det;
    s.depth = pc.z;
    for (int a = 0; a < 3; ++a) s.color[a] = g.color[static_cast<size_t>(a)];
    s.opacity = g.opacity;
    splats.push_back(s);
  }
  std::stable_sort(splats.begin(), splats.end(),
                   [](const Splat& a, const Splat& b) { return a.depth < b.depth; });
  RenderedFrame f;
  f.width = cam.width;
  f.height = cam.height;
  f.color.assign(static_cast<size_t>(cam.width) * cam.height * 3, 0.0f);
  f.depth.assign(static_cast<size_t>(cam.width) * cam.height, 0.0f);
  f.alpha.assign(static_cast<size_t>(cam.width) * cam.height, 0.0f);
  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      double t = 1.0, c[3] = {0, 0, 0}, d = 0, a_sum = 0;
      for (const Splat& s : splats) {
        const double dx = px - s.mu[0], dy = py - s.mu[1];
        const double q = s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy;
        double alpha = s.opacity * std::exp(-0.5 * q);
        if (alpha > 0.999) alpha = 0.999;
        if (alpha <= 0.0) continue;
        for (int k = 0; k < 3; ++k) c[k] += alpha * t * s.color[k];
        d += alpha * t * s.depth;
        a_sum += alpha * t;
        t *= 1.0 - alpha;
      }
      const size_t pix = static_cast<size_t>(py) * cam.width + px;
      for (size_t k = 0; k < 3; ++k) f.color[pix * 3 + k] = static_cast<float>(c[k]);
      f.depth[pix] = static_cast<float>(d);
      f.alpha[pix] = static_cast<float>(a_sum);
    }
  }
  return f;
}

}  // namespace

TEST_CASE("covariance composes rotation and squared scales") {
  const Mat3 ident = covariance3d({1, 0, 0, 0}, {1, 1, 1});
  for (int i = 0; i < 9; ++i) {
    CHECK(ident.m[static_cast<size_t>(i)] == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0));
  }
  const Mat3 stretched = covariance3d({1, 0, 0, 0}, {2, 1, 1});
  CHECK(stretched.m[0] == doctest::Approx(4.0));
  CHECK(stretched.m[4] == doctest::Approx(1.0));
  CHECK(stretched.m[8] == doctest::Approx(1.0));
  const double r = std::sqrt(0.5);
  const Mat3 swapped = covariance3d({r, 0, 0, r}, {2, 1, 1});
  CHECK(swapped.m[0] == doctest::Approx(1.0));
  CHECK(swapped.m[4] == doctest::Approx(4.0));
  CHECK(swapped.m[8] == doctest::Approx(1.0));
  CHECK(std::abs(swapped.m[1]) < 1e-12);
  CHECK_THROWS_AS(covariance3d({1.1, 0, 0, 0}, {1, 1, 1}), ContractError);
  CHECK_THROWS_AS(covariance3d({1, 0, 0, 0}, {0, 1, 1}), ContractError);
}

TEST_CASE("projection puts an on-axis point at the principal point") {
  const Camera cam = axis_camera(9, 9, 100.0);
  GaussianPrimitive g;
  g.mu = {0, 0, 1};
  const ProjectedGaussian p = project_gaussian(g, cam);
  REQUIRE(!p.culled);
  CHECK(p.mu2d[0] == doctest::Approx(cam.cx));
  CHECK(p.mu2d[1] == doctest::Approx(cam.cy));
  CHECK(p.depth == doctest::Approx(1.0));

  g.mu = {0, 0, -1};
  CHECK(project_gaussian(g, cam).culled);
  g.mu = {0, 0, 0.04};
  CHECK(project_gaussian(g, cam).culled);
}

TEST_CASE("projected covariance scales by focal length over depth") {
  const Camera cam = axis_camera(9, 9, 100.0);
  GaussianPrimitive g;
  g.mu = {0, 0, 2};
  g.scale = {0.1, 0.1, 0.1};
  const ProjectedGaussian p = project_gaussian(g, cam);
  REQUIRE(!p.culled);
  CHECK(p.cov2d[0] == doctest::Approx(25.0).epsilon(1e-6));
  CHECK(p.cov2d[3] == doctest::Approx(25.0).epsilon(1e-6));
  CHECK(std::abs(p.cov2d[1]) < 1e-9);
  CHECK(std::abs(p.cov2d[2]) < 1e-9);
}

TEST_CASE("rendering no gaussians yields the zero background") {
  const RenderedFrame f = render({}, posed_camera(16, 12));
  CHECK(std::all_of(f.color.begin(), f.color.end(), [](float v) { return v == 0.0f; }));
  CHECK(std::all_of(f.depth.begin(), f.depth.end(), [](float v) { return v == 0.0f; }));
  CHECK(std::all_of(f.alpha.begin(), f.alpha.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("a saturated splat clamps alpha at the center pixel") {
  const Camera cam = axis_camera(9, 9, 20.0);
  GaussianPrimitive g;
  g.mu = {0, 0, 2};
  g.color = {0.25f, 0.5f, 0.75f};
  g.scale = {5, 5, 5};
  g.opacity = 1.0;
  const RenderedFrame f = render({g}, cam);
  const size_t center = (4 * 9 + 4);
  CHECK(f.color[center * 3 + 0] == doctest::Approx(0.999 * 0.25).epsilon(1e-7));
  CHECK(f.color[center * 3 + 1] == doctest::Approx(0.999 * 0.5).epsilon(1e-7));
  CHECK(f.color[center * 3 + 2] == doctest::Approx(0.999 * 0.75).epsilon(1e-7));
  CHECK(f.depth[center] == doctest::Approx(0.999 * 2.0).epsilon(1e-7));
  CHECK(f.alpha[center] == doctest::Approx(0.999).epsilon(1e-7));
}

TEST_CASE("rendering matches an independently written compositing oracle") {
  RngStream rng(909);
  const Camera cam = posed_camera(20, 16);
  for (int trial = 0; trial < 4; ++trial) {
    const std::vector<GaussianPrimitive> gs = random_scene(rng, 3 + trial * 2);
    const RenderedFrame mine = render(gs, cam, {false, false});
    const RenderedFrame ref = oracle_render(gs, cam);
    for (size_t i = 0; i < mine.color.size(); ++i) {
      CHECK(std::abs(mine.color[i] - ref.color[i]) <= 1e-6f);
    }
    for (size_t i = 0; i < mine.depth.size(); ++i) {
      CHECK(std::abs(mine.depth[i] - ref.depth[i]) <= 2e-6f);
      CHECK(std::abs(mine.alpha[i] - ref.alpha[i]) <= 1e-6f);
    }
  }
}

TEST_CASE("tiled rendering is bit-identical to the naive path") {
  RngStream rng(77);
  const Camera cam = posed_camera(40, 33);
  for (int trial = 0; trial < 6; ++trial) {
    const std::vector<GaussianPrimitive> gs = random_scene(rng, 16);
    const RenderedFrame naive_off = render(gs, cam, {false, false});
    const RenderedFrame tiled_off = render(gs, cam, {true, false});
    CHECK(frames_bit_equal(naive_off, tiled_off));
    const RenderedFrame naive_on = render(gs, cam, {false, true});
    const RenderedFrame tiled_on = render(gs, cam, {true, true});
    CHECK(frames_bit_equal(naive_on, tiled_on));
  }
}

TEST_CASE("input order does not change the rendered image") {
  RngStream rng(31);
  const Camera cam = posed_camera(18, 18);
  std::vector<GaussianPrimitive> gs = random_scene(rng, 10);
  const RenderedFrame base = render(gs, cam);
  std::mt19937 shuffler(5);
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(gs.begin(), gs.end(), shuffler);
    CHECK(frames_bit_equal(render(gs, cam), base));
  }
}

TEST_CASE("accumulated alpha stays in range and grows with opacity") {
  RngStream rng(4242);
  const Camera cam = posed_camera(12, 12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GaussianPrimitive> gs = random_scene(rng, 6);
    const RenderedFrame before = render(gs, cam);
    for (float a : before.alpha) {
      CHECK(a >= 0.0f);
      CHECK(a <= 1.0f);
    }
    const size_t j = static_cast<size_t>(rng.uniform_int(gs.size()));
    gs[j].opacity = std::min(1.0, gs[j].opacity + rng.uniform(0.01, 0.3));
    const RenderedFrame after = render(gs, cam);
    for (size_t p = 0; p < after.alpha.size(); ++p) {
      CHECK(after.alpha[p] >= before.alpha[p] - 1e-6f);
    }
  }
}

TEST_CASE("pixels with no contributions keep zero depth and alpha") {
  const Camera cam = axis_camera(33, 33, 60.0);
  GaussianPrimitive g;
  g.mu = {-0.25, -0.25, 1.0};  // upper-left area
  g.scale = {0.005, 0.005, 0.005};
  g.opacity = 0.9;
  const RenderedFrame f = render({g}, cam, {true, true});
  const size_t far_corner = static_cast<size_t>(32) * 33 + 32;
  CHECK(f.depth[far_corner] == 0.0f);
  CHECK(f.alpha[far_corner] == 0.0f);
  CHECK(f.alpha[1 * 33 + 1] > 0.0f);
}

TEST_CASE("render node mirrors the plain frame and zero upstream grads stay zero") {
  RngStream rng(55);
  const Camera cam = posed_camera(10, 8);
  const std::vector<GaussianPrimitive> gs = random_scene(rng, 4);
  Tensor params = Tensor::param("g", {4, kGaussianParamDim}, to_vec(pack_gaussians(gs)));
  Tensor out = render_gaussians(params, cam);
  const RenderedFrame f = render(gs, cam);
  for (size_t p = 0; p < f.depth.size(); ++p) {
    CHECK(out.data()[p * 5 + 0] == f.color[p * 3 + 0]);
    CHECK(out.data()[p * 5 + 3] == f.depth[p]);
    CHECK(out.data()[p * 5 + 4] == f.alpha[p]);
  }
  Tensor loss = sum_all(mul(out, Tensor::zeros({out.dim(0), 5})));
  backward(loss);
  for (float gv : params.grad()) CHECK(gv == 0.0f);
}

TEST_CASE("color gradient at a pixel equals that splat's alpha") {
  const Camera cam = axis_camera(9, 9, 20.0);
  GaussianPrimitive g;
  g.mu = {0, 0, 2};
  g.color = {0.3f, 0.6f, 0.2f};
  g.scale = {0.5, 0.5, 0.5};
  g.opacity = 0.7;
  Tensor params = Tensor::param("g", {1, kGaussianParamDim}, to_vec(pack_gaussians({g})));
  Tensor out = render_gaussians(params, cam, {false, false});
  std::vector<float> onehot(static_cast<size_t>(out.dim(0)) * 5, 0.0f);
  const size_t center = 4 * 9 + 4;
  onehot[center * 5 + 0] = 1.0f;  // red channel at the center pixel
  Tensor loss = sum_all(mul(out, Tensor::of({out.dim(0), 5}, std::move(onehot))));
  backward(loss);
  CHECK(params.grad()[3] == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(params.grad()[4] == 0.0f);
  CHECK(params.grad()[5] == 0.0f);
}

TEST_CASE("reconstruction loss matches a direct double computation") {
  RngStream rng(8);
  const Camera cam = posed_camera(14, 11);
  const std::vector<GaussianPrimitive> gs = random_scene(rng, 5);
  const RenderedFrame target = render(random_scene(rng, 5), cam);
  Tensor params = Tensor::param("g", {5, kGaussianParamDim}, to_vec(pack_gaussians(gs)));

  const RenderedFrame mine = render(gs, cam);
  double expect_rgb = 0.0, expect_d = 0.0;
  for (size_t p = 0; p < mine.depth.size(); ++p) {
    for (size_t a = 0; a < 3; ++a) {
      const double r = static_cast<double>(mine.color[p * 3 + a]) - target.color[p * 3 + a];
      expect_rgb += r * r;
    }
    const double rd = static_cast<double>(mine.depth[p]) - target.depth[p];
    expect_d += rd * rd;
  }
  Tensor both = render_rgbd_loss(params, cam, target, 0.25, true, true);
  CHECK(both.item() == doctest::Approx(expect_rgb + 0.25 * expect_d).epsilon(1e-6));
  Tensor rgb_only = render_rgbd_loss(params, cam, target, 0.25, true, false);
  CHECK(rgb_only.item() == doctest::Approx(expect_rgb).epsilon(1e-6));
  Tensor depth_only = render_rgbd_loss(params, cam, target, 0.25, false, true);
  CHECK(depth_only.item() == doctest::Approx(0.25 * expect_d).epsilon(1e-6));
  Tensor off = render_rgbd_loss(params, cam, target, 0.25, false, false);
  CHECK(off.item() == 0.0);
  CHECK(!off.requires_grad());
}

TEST_CASE("analytic render gradients agree with finite differences") {
  RngStream rng(123);
  const Camera cam = posed_camera(24, 24);
  std::vector<GaussianPrimitive> gs = random_scene(rng, 5);
  for (GaussianPrimitive& g : gs) {
    g.scale = {rng.uniform(0.06, 0.2), rng.uniform(0.06, 0.2), rng.uniform(0.06, 0.2)};
  }
  const RenderedFrame target = render(random_scene(rng, 5), cam);
  Tensor params = Tensor::param("g", {5, kGaussianParamDim}, to_vec(pack_gaussians(gs)));
  auto forward = [&]() {
    return render_rgbd_loss(params, cam, target, 0.5, true, true, {false, false});
  };
  const FdReport rep = finite_diff_check(forward, {params});
  CHECK(rep.checked == 70);
  CHECK(rep.frac_below(1e-4) >= 0.95);
  CHECK(rep.within(1e-7, 1e-3));
}

TEST_CASE("behind-camera splats are culled and get no gradient") {
  const Camera cam = axis_camera(9, 9, 20.0);
  GaussianPrimitive front;
  front.mu = {0, 0, 1.5};
  front.color = {1.0f, 0.0f, 0.0f};
  front.scale = {0.3, 0.3, 0.3};
  front.opacity = 0.5;
  GaussianPrimitive behind = front;
  behind.mu = {0, 0, -1.5};
  const RenderedFrame solo = render({front}, cam);
  const RenderedFrame both = render({front, behind}, cam);
  CHECK(frames_bit_equal(solo, both));

  Tensor params =
      Tensor::param("g", {2, kGaussianParamDim}, to_vec(pack_gaussians({front, behind})));
  const RenderedFrame target = render({}, cam);
  Tensor loss = render_rgbd_loss(params, cam, target, 1.0, true, true);
  backward(loss);
  bool front_has_grad = false;
  for (int i = 0; i < kGaussianParamDim; ++i) {
    front_has_grad = front_has_grad || params.grad()[static_cast<size_t>(i)] != 0.0f;
    CHECK(params.grad()[static_cast<size_t>(kGaussianParamDim + i)] == 0.0f);
  }
  CHECK(front_has_grad);
}

TEST_CASE("pixmap and depth raster files round-trip bit-exactly") {
  const std::string dir = (std::filesystem::temp_directory_path() / "gswm_img_test").string();
  std::filesystem::create_directories(dir);
  const std::vector<float> rgb{0.0f, 0.5f, 1.0f, 0.25f, -0.1f, 1.2f};
  write_ppm(dir + "/a.ppm", 2, 1, rgb);
  const std::string bytes = read_file_bytes(dir + "/a.ppm");
  const std::string expect = std::string("P6\n2 1\n255\n") +
                             std::string({0, char(128), char(255), 64, 0, char(255)});
  CHECK(bytes == expect);
  const LoadedImage img = read_ppm(dir + "/a.ppm");
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.rgb[1] == doctest::Approx(128.0 / 255.0));

  std::vector<float> depth{0.0f, 1.25f, 3.5e-3f, 100.0f, 0.123456f, 2.0f};
  write_depth_raster(dir + "/d.bin", 3, 2, depth);
  const LoadedDepth d = read_depth_raster(dir + "/d.bin");
  CHECK(d.width == 3);
  CHECK(d.height == 2);
  CHECK(std::memcmp(d.depth.data(), depth.data(), depth.size() * 4) == 0);
  const std::string raw = read_file_bytes(dir + "/d.bin");
  CHECK(raw.size() == 16 + depth.size() * 4);
  CHECK(raw.substr(0, 8) == "GSWMDPTH");
  std::filesystem::remove_all(dir);
}

TEST_CASE("packed parameter rows round-trip through primitives") {
  RngStream rng(2);
  const std::vector<GaussianPrimitive> gs = random_scene(rng, 7);
  const Tensor packed = pack_gaussians(gs);
  REQUIRE(packed.dim(0) == 7);
  REQUIRE(packed.dim(1) == kGaussianParamDim);
  const std::vector<GaussianPrimitive> back = unpack_gaussians(packed);
  const Tensor repacked = pack_gaussians(back);
  CHECK(std::memcmp(packed.data().data(), repacked.data().data(),
                    packed.data().size() * 4) == 0);
}
