#include <doctest.h>

#include <algorithm>

#include "fd_scene_helpers.hpp"
#include "omni/splat_render.hpp"
#include "omni/ssim.hpp"
#include "omni/synthetic.hpp"

using namespace omni;
using omni::testing::FdScene;
using omni::testing::make_fd_scene;
using omni::testing::total_loss;

namespace {

Intrinsics small_intrinsics(int size = 32) {
  Intrinsics k;
  k.width = k.height = size;
  k.fx = k.fy = size * 0.9;
  k.cx = k.cy = (size - 1) / 2.0;
  return k;
}

GaussianPrimitive simple_gaussian(const Eigen::Vector3d& mu, double scale, double opacity,
                                  const Eigen::Vector3d& color = {0.5, 0.5, 0.5}) {
  GaussianPrimitive g;
  g.mu = mu;
  g.scale = Eigen::Vector3d::Constant(scale);
  g.opacity = opacity;
  g.color = color;
  return g;
}

bool grad_close(double analytic, double fd) {
  return std::abs(analytic - fd) <= 1e-3 * std::max(std::abs(analytic), std::abs(fd)) + 1e-8;
}

}  // namespace

TEST_CASE("gaussian_weight_3d closed forms and brute-force oracle") {
  GaussianPrimitive g = simple_gaussian({0.2, -0.1, 1.0}, 0.05, 0.7);
  CHECK(gaussian_weight_3d(g, g.mu) == doctest::Approx(0.7).epsilon(1e-12));

  const Eigen::Vector3d x = g.mu + Eigen::Vector3d(0.05, 0, 0);
  CHECK(gaussian_weight_3d(g, x) ==
        doctest::Approx(0.7 * std::exp(-0.5)).epsilon(1e-12));

  // Random anisotropic case against explicit 3x3 inversion.
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    GaussianPrimitive r;
    r.mu = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    r.scale = {rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3)};
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    r.q = q.normalized();
    r.opacity = rng.uniform(0.1, 1.0);
    const Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Eigen::Matrix3d sigma = r.covariance();
    const Eigen::Vector3d d = p - r.mu;
    const double expected =
        r.opacity * std::exp(-0.5 * d.dot(sigma.inverse() * d));
    CHECK(gaussian_weight_3d(r, p) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("project_gaussian pinhole center and closed-form covariance") {
  const Intrinsics k = small_intrinsics(64);
  GaussianPrimitive g = simple_gaussian({0, 0, 1.5}, 0.04, 0.5);
  const auto p = project_gaussian(g, Pose{}, k);
  REQUIRE(p.has_value());
  CHECK(p->mean2d.x() == doctest::Approx(k.cx).epsilon(1e-12));
  CHECK(p->mean2d.y() == doctest::Approx(k.cy).epsilon(1e-12));
  CHECK(p->depth == doctest::Approx(1.5).epsilon(1e-12));

  // Axis-aligned isotropic case: J has no cross terms at the center.
  const double sx = k.fx * 0.04 / 1.5;
  CHECK(p->cov2d(0, 0) == doctest::Approx(sx * sx + 0.3).epsilon(1e-9));
  CHECK(p->cov2d(1, 1) == doctest::Approx(sx * sx + 0.3).epsilon(1e-9));
  CHECK(p->cov2d(0, 1) == doctest::Approx(0.0).epsilon(1e-9));

  GaussianPrimitive behind = simple_gaussian({0, 0, -1.0}, 0.04, 0.5);
  CHECK(!project_gaussian(behind, Pose{}, k).has_value());

  GaussianPrimitive far_off = simple_gaussian({50.0, 0, 1.0}, 0.01, 0.5);
  CHECK(!project_gaussian(far_off, Pose{}, k).has_value());
}

TEST_CASE("render single-gaussian center pixel matches the one-term blend") {
  Intrinsics k = small_intrinsics(33);
  k.cx = k.cy = 16;  // integer: a pixel sits exactly at the mean
  const double o = 0.6, z = 1.2;
  const Eigen::Vector3d c(0.3, 0.7, 0.9);
  const std::vector<GaussianPrimitive> field{simple_gaussian({0, 0, z}, 0.05, o, c)};
  const RenderOutput out = render(field, Pose{}, k);
  CHECK(std::abs(out.alpha.at(16, 16) - o) < 1e-9);
  CHECK(std::abs(out.color.r.at(16, 16) - o * c.x()) < 1e-9);
  CHECK(std::abs(out.color.g.at(16, 16) - o * c.y()) < 1e-9);
  CHECK(std::abs(out.color.b.at(16, 16) - o * c.z()) < 1e-9);
  CHECK(std::abs(out.depth.at(16, 16) - o * z) < 1e-9);
}

TEST_CASE("render two-term blend: near-opaque front occludes the back") {
  Intrinsics k = small_intrinsics(33);
  k.cx = k.cy = 16;
  auto front = simple_gaussian({0, 0, 1.0}, 0.08, 1.0, {1, 1, 1});  // clips to 0.999
  auto back = simple_gaussian({0, 0, 2.0}, 0.16, 0.8, {1, 0, 0});
  const RenderOutput out = render({front, back}, Pose{}, k);

  // Hand two-term blend at the center pixel.
  const double a_f = 0.999;
  const double a_b = 0.8;
  const double expected_r = 1.0 * a_f + 1.0 * a_b * (1 - a_f);
  CHECK(std::abs(out.color.r.at(16, 16) - expected_r) < 1e-9);
  // Back contribution to green/blue is zero; to red it is < 1e-3.
  CHECK(out.color.r.at(16, 16) - a_f < 1e-3);

  SUBCASE("empty field renders zeros") {
    const RenderOutput empty = render({}, Pose{}, k);
    for (double v : empty.alpha.data()) CHECK(v == 0.0);
    for (double v : empty.color.r.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("accumulated alpha stays within [0,1]") {
  const FdScene s = make_fd_scene(100, 10);
  const RenderOutput out = render(s.field, Pose{}, s.intrinsics);
  for (double a : out.alpha.data()) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0 + 1e-12);
  }
}

TEST_CASE("insertion-order permutation leaves the render bit-identical") {
  FdScene s = make_fd_scene(200, 8);
  const RenderOutput base = render(s.field, Pose{}, s.intrinsics);
  std::vector<GaussianPrimitive> shuffled = s.field;
  Rng rng(5);
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
  const RenderOutput perm = render(shuffled, Pose{}, s.intrinsics);
  CHECK(base.color.r.data() == perm.color.r.data());
  CHECK(base.color.g.data() == perm.color.g.data());
  CHECK(base.color.b.data() == perm.color.b.data());
  CHECK(base.depth.data() == perm.depth.data());
  CHECK(base.alpha.data() == perm.alpha.data());
}

TEST_CASE("apply_camera_model identities and the exposure laws") {
  Rng rng(9);
  ColorImage img(24, 24);
  for (int c = 0; c < 3; ++c)
    for (auto& v : img.channel(c).data()) v = rng.uniform();

  SUBCASE("omega_raw=1, omega_trans=0 is the identity") {
    CameraModel cam{1.0, 0.0, 3.7, -2.1};
    const ColorImage out = apply_camera_model(img, cam);
    for (int c = 0; c < 3; ++c) CHECK(out.channel(c).data() == img.channel(c).data());
  }

  SUBCASE("brightness scaling is exact when translations vanish") {
    CameraModel cam{0.6, 0.6, 0.0, 0.0};
    const ColorImage out = apply_camera_model(img, cam);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < out.r.size(); ++i)
        CHECK(std::abs(out.channel(c).data()[i] - 1.2 * img.channel(c).data()[i]) <= 1e-12);
  }

  SUBCASE("exposure linearity in the input image") {
    CameraModel cam{0.4, 0.7, 1.3, -0.6};
    ColorImage doubled(24, 24);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < img.r.size(); ++i)
        doubled.channel(c).data()[i] = 2.0 * img.channel(c).data()[i];
    const ColorImage a = apply_camera_model(img, cam);
    const ColorImage b = apply_camera_model(doubled, cam);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < img.r.size(); ++i)
        CHECK(std::abs(b.channel(c).data()[i] - 2.0 * a.channel(c).data()[i]) <= 1e-12);
  }
}

TEST_CASE("camera model impulse response matches the convolution oracle") {
  ColorImage impulse(32, 32);
  impulse.r.at(16, 12) = 1.0;
  impulse.g.at(16, 12) = 1.0;
  impulse.b.at(16, 12) = 1.0;
  CameraModel cam{0.5, 0.5, 3.0, 0.0};
  const ColorImage out = apply_camera_model(impulse, cam);

  // Direct convolution with the kernel 0.5*delta(0) + 0.5*delta(3px, x).
  ColorImage oracle(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = 0.5 * impulse.channel(c).at(y, x);
        if (x - 3 >= 0) v += 0.5 * impulse.channel(c).at(y, x - 3);
        oracle.channel(c).at(y, x) = v;
      }
    }
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < out.r.size(); ++i)
      CHECK(std::abs(out.channel(c).data()[i] - oracle.channel(c).data()[i]) <= 1e-9);
  CHECK(out.r.at(16, 15) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.r.at(16, 12) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("normal_from_depth on planes") {
  const Intrinsics k = small_intrinsics(32);

  SUBCASE("fronto-parallel plane gives (0,0,-1)") {
    Image depth(32, 32, 1.5);
    const NormalImage n = normal_from_depth(depth, k);
    for (int y = 1; y < 31; ++y)
      for (int x = 1; x < 31; ++x) {
        REQUIRE(n.valid.get(y, x));
        CHECK(n.nx.at(y, x) == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(n.ny.at(y, x) == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(n.nz.at(y, x) == doctest::Approx(-1.0).epsilon(1e-9));
      }
  }

  SUBCASE("45-degree tilt within one degree of the analytic normal") {
    // Plane n.(p - p0) = 0 with n = (0, -1, -1)/sqrt(2): depth per pixel from
    // the analytic ray-plane intersection.
    const Eigen::Vector3d n_plane = Eigen::Vector3d(0, -1, -1).normalized();
    const Eigen::Vector3d p0(0, 0, 2.0);
    Image depth(32, 32, 0.0);
    for (int v = 0; v < 32; ++v)
      for (int u = 0; u < 32; ++u) {
        const Eigen::Vector3d dir = k.ray(u, v);
        const double t = n_plane.dot(p0) / n_plane.dot(dir);
        if (t > 0) depth.at(v, u) = t;  // dir has unit z, so t is camera depth
      }
    const NormalImage n = normal_from_depth(depth, k);
    for (int y = 1; y < 31; ++y)
      for (int x = 1; x < 31; ++x) {
        if (!n.valid.get(y, x)) continue;
        const Eigen::Vector3d got(n.nx.at(y, x), n.ny.at(y, x), n.nz.at(y, x));
        const double angle = std::acos(std::clamp(got.dot(n_plane), -1.0, 1.0));
        CHECK(angle <= 1.0 * M_PI / 180.0);
      }
  }

  SUBCASE("isolated valid pixel is masked out") {
    Image depth(32, 32, 0.0);
    depth.at(10, 10) = 1.0;
    const NormalImage n = normal_from_depth(depth, k);
    CHECK(!n.valid.get(10, 10));
    CHECK(n.nx.at(10, 10) == 0.0);
    CHECK(n.nz.at(10, 10) == 0.0);
  }
}

TEST_CASE("loss_all identities") {
  const FdScene s = make_fd_scene(300, 5);
  const RenderContext ctx = make_render_context(s.field, Pose{}, s.intrinsics);

  SUBCASE("rendered == target under identity camera gives zero losses") {
    FrameBundle self = s.target;
    self.color = ctx.out.color;
    self.depth = ctx.out.depth;
    const LossReport rep = loss_all(ctx.out, CameraModel{1.0, 0.0, 0, 0}, self, LossWeights{});
    CHECK(rep.rgb == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.ssim == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rep.depth == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.normal == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rep.total == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("constant offset of 0.1 gives l_rgb = 0.1") {
    RenderOutput flat;
    flat.color = ColorImage(32, 32, 0.5);
    flat.depth = Image(32, 32, 0.0);
    flat.alpha = Image(32, 32, 1.0);
    FrameBundle target;
    target.color = ColorImage(32, 32, 0.6);
    target.depth = Image(32, 32, 0.0);
    target.intrinsics = s.intrinsics;
    LossWeights w;
    w.ssim = 0;
    w.depth = 0;
    w.normal = 0;
    const LossReport rep = loss_all(flat, CameraModel{1.0, 0.0, 0, 0}, target, w);
    CHECK(rep.rgb == doctest::Approx(0.1).epsilon(1e-12));
  }
}

TEST_CASE("ssim identity and symmetry") {
  Rng rng(17);
  Image a(32, 32), b(32, 32);
  for (auto& v : a.data()) v = rng.uniform();
  for (auto& v : b.data()) v = rng.uniform();
  CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-9);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
  CHECK(ssim(a, b) < 1.0);
}

TEST_CASE("backward matches central finite differences") {
  LossWeights w;  // all four losses active
  int checked_scenes = 0;
  for (std::uint64_t seed : {11, 22, 33}) {
    FdScene s = make_fd_scene(seed);
    RenderGradients grads(s.field.size());
    const RenderContext ctx = make_render_context(s.field, Pose{}, s.intrinsics);
    backward(ctx, s.cam, s.target, w, grads);

    const double h = 1e-4;
    // Color and opacity of every primitive.
    for (std::size_t i = 0; i < s.field.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        FdScene plus = s, minus = s;
        plus.field[i].color[c] += h;
        minus.field[i].color[c] -= h;
        const double fd = (total_loss(plus, w) - total_loss(minus, w)) / (2 * h);
        CHECK_MESSAGE(grad_close(grads.color[i][c], fd),
                      "color grad scene=" << seed << " i=" << i << " c=" << c << " analytic="
                                          << grads.color[i][c] << " fd=" << fd);
      }
      FdScene plus = s, minus = s;
      plus.field[i].opacity += h;
      minus.field[i].opacity -= h;
      const double fd = (total_loss(plus, w) - total_loss(minus, w)) / (2 * h);
      CHECK_MESSAGE(grad_close(grads.opacity[i], fd),
                    "opacity grad scene=" << seed << " i=" << i
                                          << " analytic=" << grads.opacity[i] << " fd=" << fd);
    }
    // Camera parameters.
    auto fd_cam = [&](auto setter) {
      FdScene plus = s, minus = s;
      setter(plus.cam, h);
      setter(minus.cam, -h);
      return (total_loss(plus, w) - total_loss(minus, w)) / (2 * h);
    };
    const double fd_wr = fd_cam([](CameraModel& c, double d) { c.omega_raw += d; });
    const double fd_wt = fd_cam([](CameraModel& c, double d) { c.omega_trans += d; });
    const double fd_dx = fd_cam([](CameraModel& c, double d) { c.x_trans += d; });
    const double fd_dy = fd_cam([](CameraModel& c, double d) { c.y_trans += d; });
    CHECK_MESSAGE(grad_close(grads.omega_raw, fd_wr),
                  "omega_raw " << grads.omega_raw << " vs " << fd_wr);
    CHECK_MESSAGE(grad_close(grads.omega_trans, fd_wt),
                  "omega_trans " << grads.omega_trans << " vs " << fd_wt);
    CHECK_MESSAGE(grad_close(grads.x_trans, fd_dx), "x_trans " << grads.x_trans << " vs "
                                                               << fd_dx);
    CHECK_MESSAGE(grad_close(grads.y_trans, fd_dy), "y_trans " << grads.y_trans << " vs "
                                                               << fd_dy);
    ++checked_scenes;
  }
  CHECK(checked_scenes == 3);
}

TEST_CASE("single-gaussian color gradient under pure L1 is tight") {
  // rel error < 1e-4 at h = 1e-4 away from kinks, L1-only loss.
  FdScene s = make_fd_scene(44, 1);
  LossWeights w;
  w.ssim = 0;
  w.depth = 0;
  w.normal = 0;
  RenderGradients grads(1);
  const RenderContext ctx = make_render_context(s.field, Pose{}, s.intrinsics);
  backward(ctx, s.cam, s.target, w, grads);
  const double h = 1e-4;
  for (int c = 0; c < 3; ++c) {
    FdScene plus = s, minus = s;
    plus.field[0].color[c] += h;
    minus.field[0].color[c] -= h;
    const double fd = (total_loss(plus, w) - total_loss(minus, w)) / (2 * h);
    const double a = grads.color[0][c];
    CHECK(std::abs(a - fd) <= 1e-4 * std::max({std::abs(a), std::abs(fd), 1e-12}));
  }
}

TEST_CASE("omega_raw gradient closed form for constant images") {
  // ctx with no primitives but a constant rendered color exercises the camera
  // chain alone: d/d omega_raw mean|omega_raw*I - T| = -mean(I) while
  // omega_raw*I < T everywhere.
  const int n = 24;
  RenderContext ctx;
  ctx.intrinsics = small_intrinsics(n);
  ctx.out.color = ColorImage(n, n, 0.4);
  ctx.out.depth = Image(n, n, 0.0);
  ctx.out.alpha = Image(n, n, 0.0);
  ctx.field_size = 0;

  FrameBundle target;
  target.color = ColorImage(n, n, 0.9);
  target.depth = Image(n, n, 0.0);
  target.intrinsics = ctx.intrinsics;

  LossWeights w;
  w.rgb = 1.0;
  w.ssim = 0;
  w.depth = 0;
  w.normal = 0;
  RenderGradients grads(0);
  CameraModel cam{0.5, 0.0, 0.0, 0.0};
  backward(ctx, cam, target, w, grads);
  CHECK(grads.omega_raw == doctest::Approx(-0.4).epsilon(1e-12));
}

TEST_CASE("zero-weight losses give zero gradients") {
  FdScene s = make_fd_scene(55);
  LossWeights w;
  w.rgb = w.ssim = w.depth = w.normal = 0;
  RenderGradients grads(s.field.size());
  const RenderContext ctx = make_render_context(s.field, Pose{}, s.intrinsics);
  backward(ctx, s.cam, s.target, w, grads);
  for (const auto& g : grads.color) CHECK(g.norm() == 0.0);
  for (double g : grads.opacity) CHECK(g == 0.0);
  CHECK(grads.omega_raw == 0.0);
  CHECK(grads.omega_trans == 0.0);
  CHECK(grads.x_trans == 0.0);
  CHECK(grads.y_trans == 0.0);
}
