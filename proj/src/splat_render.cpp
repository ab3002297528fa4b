#include "omni/splat_render.hpp"

#include <algorithm>
#include <cmath>

#include "omni/ssim.hpp"

namespace omni {

namespace {

constexpr double kNearPlane = 0.01;
constexpr double kCovReg = 0.3;       // px^2 added to the 2D covariance diagonal
constexpr double kAlphaMin = 1.0 / 255.0;
constexpr double kAlphaMax = 0.999;
constexpr double kTransmittanceMin = 1e-4;
constexpr double kBoundSigma = 3.5;   // raster extent; covers every alpha >= 1/255

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace

double gaussian_weight_3d(const GaussianPrimitive& g, const Eigen::Vector3d& x) {
  if (g.scale.minCoeff() <= 0) throw NumericalError("gaussian_weight_3d: singular covariance");
  const Eigen::Matrix3d R = g.q.normalized().toRotationMatrix();
  const Eigen::Vector3d inv_s2 = g.scale.cwiseProduct(g.scale).cwiseInverse();
  const Eigen::Vector3d d_local = R.transpose() * (x - g.mu);
  const double maha = d_local.cwiseProduct(d_local).dot(inv_s2);
  return g.opacity * std::exp(-0.5 * maha);
}

std::optional<Projected2D> project_gaussian(const GaussianPrimitive& g, const Pose& pose,
                                            const Intrinsics& intrinsics) {
  const Eigen::Vector3d cam = pose.to_camera(g.mu);
  if (cam.z() <= kNearPlane) return std::nullopt;

  Projected2D p;
  p.depth = cam.z();
  p.mean2d = {intrinsics.fx * cam.x() / cam.z() + intrinsics.cx,
              intrinsics.fy * cam.y() / cam.z() + intrinsics.cy};

  Eigen::Matrix<double, 2, 3> J;
  const double iz = 1.0 / cam.z();
  J << intrinsics.fx * iz, 0, -intrinsics.fx * cam.x() * iz * iz,
       0, intrinsics.fy * iz, -intrinsics.fy * cam.y() * iz * iz;
  const Eigen::Matrix3d W = pose.rotation.transpose();
  p.cov2d = J * W * g.covariance() * W.transpose() * J.transpose();
  p.cov2d(0, 0) += kCovReg;
  p.cov2d(1, 1) += kCovReg;

  const double sx = 3.0 * std::sqrt(p.cov2d(0, 0));
  const double sy = 3.0 * std::sqrt(p.cov2d(1, 1));
  if (p.mean2d.x() < -sx || p.mean2d.x() > intrinsics.width - 1 + sx ||
      p.mean2d.y() < -sy || p.mean2d.y() > intrinsics.height - 1 + sy)
    return std::nullopt;
  return p;
}

RenderContext make_render_context(const std::vector<GaussianPrimitive>& field,
                                  const Pose& pose, const Intrinsics& intrinsics) {
  RenderContext ctx;
  ctx.intrinsics = intrinsics;
  ctx.field_size = field.size();
  const int w = intrinsics.width, h = intrinsics.height;
  ctx.out.color = ColorImage(w, h);
  ctx.out.depth = Image(w, h);
  ctx.out.alpha = Image(w, h);

  for (int i = 0; i < static_cast<int>(field.size()); ++i) {
    auto proj = project_gaussian(field[i], pose, intrinsics);
    if (!proj) continue;
    const Eigen::Matrix2d& cov = proj->cov2d;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (det <= 0) continue;

    RasterGaussian rg;
    rg.index = i;
    rg.depth = proj->depth;
    rg.mean_x = proj->mean2d.x();
    rg.mean_y = proj->mean2d.y();
    rg.conic_a = cov(1, 1) / det;
    rg.conic_b = -cov(0, 1) / det;
    rg.conic_c = cov(0, 0) / det;
    rg.color = field[i].color;
    rg.opacity = field[i].opacity;

    const double tr = cov(0, 0) + cov(1, 1);
    const double disc = std::sqrt(std::max(0.0, tr * tr - 4 * det));
    const double lmax = 0.5 * (tr + disc);
    const double radius = kBoundSigma * std::sqrt(lmax);
    rg.x0 = std::max(0, static_cast<int>(std::floor(rg.mean_x - radius)));
    rg.x1 = std::min(w - 1, static_cast<int>(std::ceil(rg.mean_x + radius)));
    rg.y0 = std::max(0, static_cast<int>(std::floor(rg.mean_y - radius)));
    rg.y1 = std::min(h - 1, static_cast<int>(std::ceil(rg.mean_y + radius)));
    if (rg.x0 > rg.x1 || rg.y0 > rg.y1) continue;
    ctx.sorted.push_back(rg);
  }

  std::sort(ctx.sorted.begin(), ctx.sorted.end(), [](const RasterGaussian& a,
                                                     const RasterGaussian& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.index < b.index;
  });

  // Front-to-back alpha compositing of color and depth.
  Image transmittance(w, h, 1.0);
  for (const RasterGaussian& rg : ctx.sorted) {
    for (int y = rg.y0; y <= rg.y1; ++y) {
      for (int x = rg.x0; x <= rg.x1; ++x) {
        double& T = transmittance.at(y, x);
        if (T < kTransmittanceMin) continue;
        const double dx = x - rg.mean_x, dy = y - rg.mean_y;
        const double maha = rg.conic_a * dx * dx + 2 * rg.conic_b * dx * dy +
                            rg.conic_c * dy * dy;
        double alpha = rg.opacity * std::exp(-0.5 * maha);
        if (alpha < kAlphaMin) continue;
        alpha = std::min(alpha, kAlphaMax);
        const double wgt = alpha * T;
        ctx.out.color.r.at(y, x) += rg.color.x() * wgt;
        ctx.out.color.g.at(y, x) += rg.color.y() * wgt;
        ctx.out.color.b.at(y, x) += rg.color.z() * wgt;
        ctx.out.depth.at(y, x) += rg.depth * wgt;
        ctx.out.alpha.at(y, x) += wgt;
        T *= 1.0 - alpha;
      }
    }
  }
  return ctx;
}

RenderOutput render(const std::vector<GaussianPrimitive>& field, const Pose& pose,
                    const Intrinsics& intrinsics) {
  return make_render_context(field, pose, intrinsics).out;
}

// --- Camera model -------------------------------------------------------------

namespace {

// Bilinear sample with clamped edges; also reports spatial derivatives and the
// four scatter taps for the adjoint.
struct Tap {
  int x0, y0;
  double w00, w10, w01, w11;
  double value, ddx, ddy;
};

Tap sample_bilinear(const Image& img, double x, double y) {
  const int W = img.width(), H = img.height();
  const bool inside_x = x > 0.0 && x < W - 1;
  const bool inside_y = y > 0.0 && y < H - 1;
  const double xc = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(H - 1));
  int x0 = std::min(static_cast<int>(std::floor(xc)), W - 2);
  int y0 = std::min(static_cast<int>(std::floor(yc)), H - 2);
  if (W == 1) x0 = 0;
  if (H == 1) y0 = 0;
  const double fx = xc - x0, fy = yc - y0;

  Tap t;
  t.x0 = x0;
  t.y0 = y0;
  t.w00 = (1 - fx) * (1 - fy);
  t.w10 = fx * (1 - fy);
  t.w01 = (1 - fx) * fy;
  t.w11 = fx * fy;
  const double i00 = img.at(y0, x0);
  const double i10 = img.at(y0, std::min(x0 + 1, W - 1));
  const double i01 = img.at(std::min(y0 + 1, H - 1), x0);
  const double i11 = img.at(std::min(y0 + 1, H - 1), std::min(x0 + 1, W - 1));
  t.value = t.w00 * i00 + t.w10 * i10 + t.w01 * i01 + t.w11 * i11;
  t.ddx = inside_x ? (1 - fy) * (i10 - i00) + fy * (i11 - i01) : 0.0;
  t.ddy = inside_y ? (1 - fx) * (i01 - i00) + fx * (i11 - i10) : 0.0;
  return t;
}

}  // namespace

Image translate_bilinear(const Image& img, double dx, double dy) {
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(y, x) = sample_bilinear(img, x - dx, y - dy).value;
  return out;
}

ColorImage translate_bilinear(const ColorImage& img, double dx, double dy) {
  ColorImage out;
  out.r = translate_bilinear(img.r, dx, dy);
  out.g = translate_bilinear(img.g, dx, dy);
  out.b = translate_bilinear(img.b, dx, dy);
  return out;
}

ColorImage apply_camera_model(const ColorImage& image, const CameraModel& cam) {
  ColorImage shifted = translate_bilinear(image, cam.x_trans, cam.y_trans);
  ColorImage out(image.width(), image.height());
  for (int c = 0; c < 3; ++c) {
    const Image& src = image.channel(c);
    const Image& sh = shifted.channel(c);
    Image& dst = out.channel(c);
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst.data()[i] = cam.omega_trans * sh.data()[i] + cam.omega_raw * src.data()[i];
  }
  return out;
}

// --- Normals --------------------------------------------------------------------

NormalImage normal_from_depth(const Image& depth, const Intrinsics& intrinsics) {
  const int w = depth.width(), h = depth.height();
  NormalImage out;
  out.nx = Image(w, h);
  out.ny = Image(w, h);
  out.nz = Image(w, h);
  out.valid = Mask(w, h);

  auto point = [&](int y, int x) -> Eigen::Vector3d {
    return intrinsics.ray(x, y) * depth.at(y, x);
  };

  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      if (depth.at(y, x) <= 0 || depth.at(y, x - 1) <= 0 || depth.at(y, x + 1) <= 0 ||
          depth.at(y - 1, x) <= 0 || depth.at(y + 1, x) <= 0)
        continue;
      const Eigen::Vector3d tu = point(y, x + 1) - point(y, x - 1);
      const Eigen::Vector3d tv = point(y + 1, x) - point(y - 1, x);
      const Eigen::Vector3d n = tv.cross(tu);  // faces the camera (-z on a wall)
      const double len = n.norm();
      if (len < 1e-12) continue;
      out.nx.at(y, x) = n.x() / len;
      out.ny.at(y, x) = n.y() / len;
      out.nz.at(y, x) = n.z() / len;
      out.valid.set(y, x, true);
    }
  }
  return out;
}

// --- Losses ----------------------------------------------------------------------

LossReport loss_all(const RenderOutput& rendered, const CameraModel& cam,
                    const FrameBundle& target, const LossWeights& weights) {
  if (!rendered.color.same_size(target.color))
    throw DataError("loss_all: image dimensions differ");
  const int w = rendered.color.width(), h = rendered.color.height();
  LossReport rep;

  const ColorImage cam_color = apply_camera_model(rendered.color, cam);
  double l1 = 0;
  for (int c = 0; c < 3; ++c) {
    const Image& a = cam_color.channel(c);
    const Image& b = target.color.channel(c);
    for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(a.data()[i] - b.data()[i]);
  }
  rep.rgb = l1 / (3.0 * w * h);

  rep.ssim = 1.0 - ssim(cam_color, target.color);

  std::size_t n_depth = 0;
  double ld = 0;
  for (std::size_t i = 0; i < target.depth.size(); ++i) {
    const double d = target.depth.data()[i];
    if (d <= 0) continue;
    ld += std::abs(rendered.depth.data()[i] - d);
    ++n_depth;
  }
  rep.depth = n_depth ? ld / n_depth : 0.0;

  const NormalImage nr = normal_from_depth(rendered.depth, target.intrinsics);
  const NormalImage nt = normal_from_depth(target.depth, target.intrinsics);
  std::size_t n_norm = 0;
  double ln = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!nr.valid.get(y, x) || !nt.valid.get(y, x)) continue;
      ln += 1.0 - (nr.nx.at(y, x) * nt.nx.at(y, x) + nr.ny.at(y, x) * nt.ny.at(y, x) +
                   nr.nz.at(y, x) * nt.nz.at(y, x));
      ++n_norm;
    }
  rep.normal = n_norm ? ln / n_norm : 0.0;

  rep.total = weights.rgb * rep.rgb + weights.ssim * rep.ssim + weights.depth * rep.depth +
              weights.normal * rep.normal;
  return rep;
}

// --- Backward ---------------------------------------------------------------------

LossReport backward(const RenderContext& ctx, const CameraModel& cam,
                    const FrameBundle& target, const LossWeights& weights,
                    RenderGradients& grads) {
  const int w = ctx.out.color.width(), h = ctx.out.color.height();
  if (grads.color.size() != ctx.field_size)
    throw DataError("backward: gradient buffer does not match the field");
  const LossReport rep = loss_all(ctx.out, cam, target, weights);

  const double n_px = 3.0 * w * h;
  const ColorImage shifted = translate_bilinear(ctx.out.color, cam.x_trans, cam.y_trans);

  // d total / d cam_color, per channel: L1 term plus the SSIM chain.
  ColorImage cam_color(w, h);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < cam_color.r.size(); ++i)
      cam_color.channel(c).data()[i] = cam.omega_trans * shifted.channel(c).data()[i] +
                                       cam.omega_raw * ctx.out.color.channel(c).data()[i];

  ColorImage g_cam(w, h);
  for (int c = 0; c < 3; ++c) {
    Image& g = g_cam.channel(c);
    const Image& a = cam_color.channel(c);
    const Image& b = target.color.channel(c);
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data()[i] = weights.rgb * sgn(a.data()[i] - b.data()[i]) / n_px;
    // l_ssim = 1 - mean over channels, so each channel carries -w_ssim/3.
    ssim_backward(a, b, -weights.ssim / 3.0, g);
  }

  // Camera-model backward: cam_color = w_t * T(C) + w_r * C.
  double g_omega_raw = 0, g_omega_trans = 0, g_dx = 0, g_dy = 0;
  ColorImage g_rgb(w, h);
  for (int c = 0; c < 3; ++c) {
    const Image& src = ctx.out.color.channel(c);
    const Image& g = g_cam.channel(c);
    Image& acc = g_rgb.channel(c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double gv = g.at(y, x);
        if (gv == 0) continue;
        const Tap t = sample_bilinear(src, x - cam.x_trans, y - cam.y_trans);
        g_omega_raw += gv * src.at(y, x);
        g_omega_trans += gv * t.value;
        // d T(C)(p) / d x_trans = -d sample / d x at the source point.
        g_dx += gv * cam.omega_trans * (-t.ddx);
        g_dy += gv * cam.omega_trans * (-t.ddy);
        // Adjoint scatter of the translate, scaled by omega_trans.
        const double s = gv * cam.omega_trans;
        acc.at(t.y0, t.x0) += s * t.w00;
        acc.at(t.y0, std::min(t.x0 + 1, w - 1)) += s * t.w10;
        acc.at(std::min(t.y0 + 1, h - 1), t.x0) += s * t.w01;
        acc.at(std::min(t.y0 + 1, h - 1), std::min(t.x0 + 1, w - 1)) += s * t.w11;
        acc.at(y, x) += gv * cam.omega_raw;
      }
    }
  }
  grads.omega_raw += g_omega_raw;
  grads.omega_trans += g_omega_trans;
  grads.x_trans += g_dx;
  grads.y_trans += g_dy;

  // Depth gradient: L1 term on target-valid pixels.
  Image g_depth(w, h);
  std::size_t n_depth = 0;
  for (std::size_t i = 0; i < target.depth.size(); ++i)
    if (target.depth.data()[i] > 0) ++n_depth;
  if (n_depth) {
    for (std::size_t i = 0; i < target.depth.size(); ++i) {
      const double d = target.depth.data()[i];
      if (d <= 0) continue;
      g_depth.data()[i] =
          weights.depth * sgn(ctx.out.depth.data()[i] - d) / static_cast<double>(n_depth);
    }
  }

  // Normal-loss chain: d(1 - <n_hat, n>)/d depth at the four neighbors.
  if (weights.normal != 0) {
    const NormalImage nr = normal_from_depth(ctx.out.depth, target.intrinsics);
    const NormalImage nt = normal_from_depth(target.depth, target.intrinsics);
    std::size_t n_norm = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (nr.valid.get(y, x) && nt.valid.get(y, x)) ++n_norm;
    if (n_norm) {
      auto point = [&](int y, int x) -> Eigen::Vector3d {
        return target.intrinsics.ray(x, y) * ctx.out.depth.at(y, x);
      };
      for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
          if (!nr.valid.get(y, x) || !nt.valid.get(y, x)) continue;
          const Eigen::Vector3d tu = point(y, x + 1) - point(y, x - 1);
          const Eigen::Vector3d tv = point(y + 1, x) - point(y - 1, x);
          const Eigen::Vector3d cross = tv.cross(tu);
          const double len = cross.norm();
          if (len < 1e-12) continue;
          const Eigen::Vector3d n = cross / len;
          const Eigen::Vector3d n_target(nt.nx.at(y, x), nt.ny.at(y, x), nt.nz.at(y, x));
          const Eigen::Vector3d g_n =
              -(weights.normal / static_cast<double>(n_norm)) * n_target;
          const Eigen::Vector3d g_cross = (g_n - n * n.dot(g_n)) / len;
          // cross = tv x tu: d/d tu = [tv]x^T g = g x tv ; d/d tv = tu x g.
          const Eigen::Vector3d g_tu = g_cross.cross(tv);
          const Eigen::Vector3d g_tv = tu.cross(g_cross);
          g_depth.at(y, x + 1) += g_tu.dot(target.intrinsics.ray(x + 1, y));
          g_depth.at(y, x - 1) -= g_tu.dot(target.intrinsics.ray(x - 1, y));
          g_depth.at(y + 1, x) += g_tv.dot(target.intrinsics.ray(x, y + 1));
          g_depth.at(y - 1, x) -= g_tv.dot(target.intrinsics.ray(x, y - 1));
        }
      }
    }
  }

  // Compositing backward: replay the forward traversal with prefix state.
  Image transmittance(w, h, 1.0);
  ColorImage c_run(w, h);
  Image d_run(w, h);
  for (const RasterGaussian& rg : ctx.sorted) {
    for (int y = rg.y0; y <= rg.y1; ++y) {
      for (int x = rg.x0; x <= rg.x1; ++x) {
        double& T = transmittance.at(y, x);
        if (T < kTransmittanceMin) continue;
        const double dx = x - rg.mean_x, dy = y - rg.mean_y;
        const double maha = rg.conic_a * dx * dx + 2 * rg.conic_b * dx * dy +
                            rg.conic_c * dy * dy;
        const double alpha_raw = rg.opacity * std::exp(-0.5 * maha);
        if (alpha_raw < kAlphaMin) continue;
        const bool clipped = alpha_raw > kAlphaMax;
        const double alpha = clipped ? kAlphaMax : alpha_raw;
        const double wgt = alpha * T;

        const double gr = g_rgb.r.at(y, x);
        const double gg = g_rgb.g.at(y, x);
        const double gb = g_rgb.b.at(y, x);
        const double gd = g_depth.at(y, x);

        grads.color[rg.index] += Eigen::Vector3d(gr, gg, gb) * wgt;

        if (!clipped) {  // at the clip the opacity derivative vanishes
          // Suffix sums: what later primitives contribute behind this one.
          const double cr = ctx.out.color.r.at(y, x) - (c_run.r.at(y, x) + rg.color.x() * wgt);
          const double cg = ctx.out.color.g.at(y, x) - (c_run.g.at(y, x) + rg.color.y() * wgt);
          const double cb = ctx.out.color.b.at(y, x) - (c_run.b.at(y, x) + rg.color.z() * wgt);
          const double cd = ctx.out.depth.at(y, x) - (d_run.at(y, x) + rg.depth * wgt);
          const double inv = 1.0 / (1.0 - alpha);
          const double g_alpha = gr * (rg.color.x() * T - cr * inv) +
                                 gg * (rg.color.y() * T - cg * inv) +
                                 gb * (rg.color.z() * T - cb * inv) +
                                 gd * (rg.depth * T - cd * inv);
          grads.opacity[rg.index] += g_alpha * (alpha / rg.opacity);
        }

        c_run.r.at(y, x) += rg.color.x() * wgt;
        c_run.g.at(y, x) += rg.color.y() * wgt;
        c_run.b.at(y, x) += rg.color.z() * wgt;
        d_run.at(y, x) += rg.depth * wgt;
        T *= 1.0 - alpha;
      }
    }
  }
  return rep;
}

}  // namespace omni
