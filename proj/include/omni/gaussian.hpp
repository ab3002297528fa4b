#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "omni/common.hpp"

namespace omni {

// One anisotropic Gaussian: center, rotation, RGB color, per-axis scale and
// opacity. Scales are meters; color and opacity live in [0,1].
struct GaussianPrimitive {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
  Eigen::Vector3d scale = Eigen::Vector3d::Constant(0.01);
  double opacity = 0.5;

  Eigen::Matrix3d covariance() const {
    const Eigen::Matrix3d R = q.normalized().toRotationMatrix();
    return R * scale.cwiseProduct(scale).asDiagonal() * R.transpose();
  }

  void validate() const {
    if (scale.minCoeff() <= 0) throw DataError("gaussian: scale must be positive");
    if (std::abs(q.norm() - 1.0) > 1e-6) throw DataError("gaussian: quaternion not unit");
    if (opacity < 0 || opacity > 1) throw DataError("gaussian: opacity outside [0,1]");
  }
};

// Per-keyframe blur/exposure model: rendered = omega_trans * T(image) +
// omega_raw * image, T a global shift by (x_trans, y_trans) pixels.
struct CameraModel {
  double omega_raw = 0.5;
  double omega_trans = 0.5;
  double x_trans = 0.0;
  double y_trans = 0.0;
};

}  // namespace omni
