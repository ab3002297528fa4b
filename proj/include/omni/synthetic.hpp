#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omni/frame.hpp"

namespace omni {

enum class ShapeKind { Sphere, Box, Cylinder };

// One rigid primitive. `rotation` maps local to world; dimensions are meters:
// sphere uses dims.x() as radius, box uses dims as half-extents, cylinder uses
// dims.x() as radius and dims.z() as half-height (axis = local z).
struct ShapeObject {
  std::uint32_t instance_id = 0;
  ShapeKind kind = ShapeKind::Sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d dims = Eigen::Vector3d::Ones();
  Eigen::Vector3d albedo = Eigen::Vector3d(0.7, 0.7, 0.7);
  Eigen::VectorXd embedding;
};

struct BackgroundPlane {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d(0, 0, 1);
  Eigen::Vector3d albedo = Eigen::Vector3d(0.5, 0.5, 0.5);
};

struct SyntheticWorld {
  std::vector<ShapeObject> objects;
  std::vector<BackgroundPlane> background;

  void validate() const;
  const ShapeObject* find(std::uint32_t id) const;
};

struct RaycastResult {
  FrameBundle frame;
  SegObservation observation;     // masks indexed like world.objects
  LabelImage instance_ids;        // per pixel, 0 = background / no hit
};

// Analytic ray casting with Lambertian shading from a fixed directional light.
RaycastResult raycast_frame(const SyntheticWorld& world, const Pose& pose,
                            const Intrinsics& intrinsics);

// First hit along origin + t*dir, t > tmin. Returns instance id (0 =
// background plane) and camera-independent hit info.
struct RayHit {
  double t = 0;
  std::uint32_t instance_id = 0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
};
std::optional<RayHit> cast_ray(const SyntheticWorld& world, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir, double tmin = 1e-6);

// Unsigned distance from a point to the object's surface.
double distance_to_surface(const ShapeObject& obj, const Eigen::Vector3d& p);

// Deterministic unit embeddings; `orthogonal` draws an orthonormal set.
std::vector<Eigen::VectorXd> make_embeddings(int count, int dim, std::uint64_t seed,
                                             bool orthogonal);

// --- Built-in scenes and trajectories ----------------------------------------

struct SceneSpec {
  SyntheticWorld world;
  std::vector<Pose> trajectory;
  Intrinsics intrinsics;
};

// Four objects on a ground plane (two abutting boxes, a sphere, a cylinder),
// orbit trajectory. Used widely by the test suites.
SceneSpec make_four_object_scene(int frames, int image_size, int embed_dim,
                                 std::uint64_t seed, bool orthogonal_embeddings);

// Two abutting boxes with highly similar embeddings; the trajectory starts on
// the first box and pans until the second enters view.
SceneSpec make_two_box_scene(int frames, int image_size, int embed_dim, std::uint64_t seed,
                             double embedding_cosine = 0.7);

// A large tilted slab viewed from a small arc; plane normal is analytic.
SceneSpec make_tilted_plane_scene(int frames, int image_size, int embed_dim,
                                  std::uint64_t seed, double tilt_radians);
// World normal of the slab's visible face.
Eigen::Vector3d tilted_plane_normal(double tilt_radians);

SceneSpec make_scene_by_name(const std::string& name, int frames, int image_size,
                             int embed_dim, std::uint64_t seed);

}  // namespace omni
