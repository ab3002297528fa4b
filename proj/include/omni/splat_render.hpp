#pragma once

#include <optional>
#include <vector>

#include "omni/frame.hpp"
#include "omni/gaussian.hpp"

namespace omni {

struct Projected2D {
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();  // regularized, px^2
  double depth = 0.0;                                   // camera-frame z, meters
  int index = -1;                                       // source primitive
};

// 3D density eta = o * exp(-0.5 d^T Sigma^-1 d).
double gaussian_weight_3d(const GaussianPrimitive& g, const Eigen::Vector3d& x);

// EWA-style projection; nullopt when behind the near plane (0.01 m) or the
// mean lies beyond the image bounds padded by 3 sigma.
std::optional<Projected2D> project_gaussian(const GaussianPrimitive& g, const Pose& pose,
                                            const Intrinsics& intrinsics);

struct RenderOutput {
  ColorImage color;
  Image depth;
  Image alpha;
};

// Forward state retained for the backward pass.
struct RenderContext;

RenderOutput render(const std::vector<GaussianPrimitive>& field, const Pose& pose,
                    const Intrinsics& intrinsics);
RenderContext make_render_context(const std::vector<GaussianPrimitive>& field,
                                  const Pose& pose, const Intrinsics& intrinsics);

// Shift by real-valued offsets with bilinear sampling and edge clamping.
Image translate_bilinear(const Image& img, double dx, double dy);
ColorImage translate_bilinear(const ColorImage& img, double dx, double dy);
ColorImage apply_camera_model(const ColorImage& image, const CameraModel& cam);

// Camera-frame normals from central differences of back-projected depth.
// Pixels with any invalid neighbor get a zero normal and a cleared valid bit.
struct NormalImage {
  Image nx, ny, nz;
  Mask valid;
};
NormalImage normal_from_depth(const Image& depth, const Intrinsics& intrinsics);

struct LossWeights {
  double rgb = 0.8;
  double ssim = 0.2;
  double depth = 0.5;
  double normal = 0.1;
};

struct LossReport {
  double rgb = 0, ssim = 0, depth = 0, normal = 0, total = 0;
};

LossReport loss_all(const RenderOutput& rendered, const CameraModel& cam,
                    const FrameBundle& target, const LossWeights& weights);

struct RenderGradients {
  std::vector<Eigen::Vector3d> color;  // per primitive
  std::vector<double> opacity;
  double omega_raw = 0, omega_trans = 0, x_trans = 0, y_trans = 0;

  explicit RenderGradients(std::size_t n) : color(n, Eigen::Vector3d::Zero()), opacity(n, 0.0) {}
};

// Analytic gradients of the total loss with respect to every primitive's
// color/opacity and the view's camera model; accumulates into `grads` and
// returns the forward losses.
LossReport backward(const RenderContext& ctx, const CameraModel& cam,
                    const FrameBundle& target, const LossWeights& weights,
                    RenderGradients& grads);

struct RasterGaussian {
  int index;
  double depth;
  double mean_x, mean_y;
  double conic_a, conic_b, conic_c;  // inverse 2D covariance
  int x0, x1, y0, y1;                // clipped pixel bounds
  Eigen::Vector3d color;
  double opacity;
};

struct RenderContext {
  RenderOutput out;
  std::vector<RasterGaussian> sorted;  // ascending depth
  Intrinsics intrinsics;
  std::size_t field_size = 0;
};

}  // namespace omni
