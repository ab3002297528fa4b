// Shared test-only machinery: randomized splat scenes screened for
// finite-difference gradient checks. FD is only meaningful away from the
// renderer's non-differentiable thresholds (alpha skip/clip, transmittance
// cutoff, L1 kinks), so candidate scenes near a crease are rejected and
// regenerated.
#pragma once

#include "omni/splat_render.hpp"
#include "omni/synthetic.hpp"

namespace omni::testing {

inline Intrinsics small_intrinsics(int size = 32) {
  Intrinsics k;
  k.width = k.height = size;
  k.fx = k.fy = size * 0.9;
  k.cx = k.cy = (size - 1) / 2.0;
  return k;
}

struct FdScene {
  std::vector<GaussianPrimitive> field;
  CameraModel cam;
  FrameBundle target;
  Intrinsics intrinsics;
};

inline bool screen_scene(const std::vector<GaussianPrimitive>& field, const Pose& pose,
                         const Intrinsics& k, const FrameBundle& target,
                         const CameraModel& cam) {
  const RenderContext ctx = make_render_context(field, pose, k);
  Image T(k.width, k.height, 1.0);
  for (const auto& rg : ctx.sorted) {
    for (int y = rg.y0; y <= rg.y1; ++y)
      for (int x = rg.x0; x <= rg.x1; ++x) {
        double& t = T.at(y, x);
        if (t < 1e-4) continue;
        const double dx = x - rg.mean_x, dy = y - rg.mean_y;
        const double maha =
            rg.conic_a * dx * dx + 2 * rg.conic_b * dx * dy + rg.conic_c * dy * dy;
        const double alpha = rg.opacity * std::exp(-0.5 * maha);
        if (alpha > 1.0 / 255.0 * 0.998 && alpha < 1.0 / 255.0 * 1.002) return false;
        if (alpha > 0.95) return false;
        if (alpha < 1.0 / 255.0) continue;
        t *= 1.0 - alpha;
        if (t > 0.995e-4 && t < 1.005e-4) return false;
      }
  }
  // L1 kink screening on the residuals the loss actually sees.
  const ColorImage cam_color = apply_camera_model(ctx.out.color, cam);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < cam_color.r.size(); ++i)
      if (std::abs(cam_color.channel(c).data()[i] - target.color.channel(c).data()[i]) <
          1e-4)
        return false;
  for (std::size_t i = 0; i < target.depth.size(); ++i) {
    if (target.depth.data()[i] <= 0) continue;
    if (std::abs(ctx.out.depth.data()[i] - target.depth.data()[i]) < 1e-4) return false;
  }
  return true;
}

inline FdScene make_fd_scene(std::uint64_t seed, int n_gaussians = 6) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(mix_seed(seed, attempt));
    FdScene s;
    s.intrinsics = small_intrinsics(32);

    // Target: a shaded tilted slab giving valid depth and normals.
    SyntheticWorld world;
    ShapeObject slab;
    slab.instance_id = 1;
    slab.kind = ShapeKind::Box;
    slab.center = {0, 0, 2.2};
    slab.dims = {2.5, 2.5, 0.05};
    slab.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitX()).toRotationMatrix();
    slab.albedo = {0.55, 0.45, 0.6};
    slab.embedding = Eigen::VectorXd::Unit(4, 0);
    world.objects = {slab};
    RaycastResult rc = raycast_frame(world, Pose{}, s.intrinsics);
    s.target = std::move(rc.frame);

    for (int i = 0; i < n_gaussians; ++i) {
      const double z = rng.uniform(0.9, 1.9);
      GaussianPrimitive g;
      g.mu = {rng.uniform(-0.3, 0.3) * z, rng.uniform(-0.3, 0.3) * z, z};
      g.scale = {rng.uniform(0.03, 0.1), rng.uniform(0.03, 0.1), rng.uniform(0.03, 0.1)};
      Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      g.q = q.normalized();
      g.color = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      g.opacity = rng.uniform(0.15, 0.85);
      s.field.push_back(g);
    }
    s.cam.omega_raw = rng.uniform(0.35, 0.65);
    s.cam.omega_trans = rng.uniform(0.35, 0.65);
    s.cam.x_trans = (rng.uniform() < 0.5 ? -1 : 1) * (rng.uniform(0.2, 0.8) + 1.0);
    s.cam.y_trans = (rng.uniform() < 0.5 ? -1 : 1) * (rng.uniform(0.2, 0.8));

    if (screen_scene(s.field, Pose{}, s.intrinsics, s.target, s.cam)) return s;
  }
}

inline double total_loss(const FdScene& s, const LossWeights& w) {
  const RenderContext ctx = make_render_context(s.field, Pose{}, s.intrinsics);
  return loss_all(ctx.out, s.cam, s.target, w).total;
}

}  // namespace omni::testing
