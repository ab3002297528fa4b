#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "omni/common.hpp"

namespace omni {

// Pinhole intrinsics. Pixel (u,v) at integer coordinates is the sample point;
// back-projection of (u,v,depth) is depth * K^-1 * [u,v,1].
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw DataError("intrinsics: focal lengths must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
      throw DataError("intrinsics: principal point outside image");
  }

  // Unit-z ray direction in the camera frame through pixel (u,v).
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
};

// Camera-to-world rigid transform.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate() const {
    const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-6) throw DataError("pose: rotation not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6)
      throw DataError("pose: rotation determinant != +1");
  }

  Eigen::Vector3d to_world(const Eigen::Vector3d& p_cam) const {
    return rotation * p_cam + translation;
  }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
    return rotation.transpose() * (p_world - translation);
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  static Pose from_matrix(const Eigen::Matrix4d& m) {
    Pose p;
    p.rotation = m.block<3, 3>(0, 0);
    p.translation = m.block<3, 1>(0, 3);
    return p;
  }

  // Camera at `eye` looking at `target`, image +y pointing down in world `up`.
  static Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up = Eigen::Vector3d(0, 0, 1)) {
    Pose p;
    Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = z.cross(up);
    if (x.norm() < 1e-9) x = z.cross(Eigen::Vector3d(0, 1, 0));
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);
    p.rotation.col(0) = x;
    p.rotation.col(1) = y;
    p.rotation.col(2) = z;
    p.translation = eye;
    return p;
  }
};

}  // namespace omni
