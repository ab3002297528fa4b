#include "omni/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace omni {

namespace {

const Eigen::Vector3d kLightDir = Eigen::Vector3d(0.35, -0.25, 0.9).normalized();

Eigen::Vector3d shade(const Eigen::Vector3d& albedo, const Eigen::Vector3d& normal) {
  const double diffuse = std::max(0.0, normal.dot(kLightDir));
  Eigen::Vector3d c = albedo * (0.25 + 0.75 * diffuse);
  return c.cwiseMin(1.0).cwiseMax(0.0);
}

struct LocalHit {
  double t;
  Eigen::Vector3d normal;  // world frame
};

std::optional<LocalHit> hit_sphere(const ShapeObject& o, const Eigen::Vector3d& origin,
                                   const Eigen::Vector3d& dir, double tmin) {
  const Eigen::Vector3d oc = origin - o.center;
  const double r = o.dims.x();
  const double a = dir.squaredNorm();
  const double b = 2.0 * oc.dot(dir);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / (2 * a);
  if (t <= tmin) t = (-b + sq) / (2 * a);
  if (t <= tmin) return std::nullopt;
  const Eigen::Vector3d p = origin + t * dir;
  return LocalHit{t, (p - o.center).normalized()};
}

std::optional<LocalHit> hit_box(const ShapeObject& o, const Eigen::Vector3d& origin,
                                const Eigen::Vector3d& dir, double tmin) {
  // Slab test in the box's local frame.
  const Eigen::Vector3d ol = o.rotation.transpose() * (origin - o.center);
  const Eigen::Vector3d dl = o.rotation.transpose() * dir;
  double t0 = tmin, t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1;
  for (int i = 0; i < 3; ++i) {
    const double e = o.dims[i];
    if (std::abs(dl[i]) < 1e-12) {
      if (ol[i] < -e || ol[i] > e) return std::nullopt;
      continue;
    }
    double ta = (-e - ol[i]) / dl[i];
    double tb = (e - ol[i]) / dl[i];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = i;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  if (axis0 < 0) return std::nullopt;  // origin inside the box
  Eigen::Vector3d nl = Eigen::Vector3d::Zero();
  nl[axis0] = dl[axis0] > 0 ? -1.0 : 1.0;
  return LocalHit{t0, o.rotation * nl};
}

std::optional<LocalHit> hit_cylinder(const ShapeObject& o, const Eigen::Vector3d& origin,
                                     const Eigen::Vector3d& dir, double tmin) {
  const Eigen::Vector3d ol = o.rotation.transpose() * (origin - o.center);
  const Eigen::Vector3d dl = o.rotation.transpose() * dir;
  const double r = o.dims.x();
  const double hh = o.dims.z();

  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector3d nl = Eigen::Vector3d::Zero();

  // Lateral surface.
  const double a = dl.x() * dl.x() + dl.y() * dl.y();
  if (a > 1e-14) {
    const double b = 2.0 * (ol.x() * dl.x() + ol.y() * dl.y());
    const double c = ol.x() * ol.x() + ol.y() * ol.y() - r * r;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= tmin || t >= best) continue;
        const Eigen::Vector3d p = ol + t * dl;
        if (std::abs(p.z()) <= hh) {
          best = t;
          nl = Eigen::Vector3d(p.x(), p.y(), 0).normalized();
        }
      }
    }
  }
  // Caps.
  if (std::abs(dl.z()) > 1e-14) {
    for (double zcap : {-hh, hh}) {
      const double t = (zcap - ol.z()) / dl.z();
      if (t <= tmin || t >= best) continue;
      const Eigen::Vector3d p = ol + t * dl;
      if (p.x() * p.x() + p.y() * p.y() <= r * r) {
        best = t;
        nl = Eigen::Vector3d(0, 0, zcap > 0 ? 1.0 : -1.0);
      }
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return LocalHit{best, o.rotation * nl};
}

std::optional<LocalHit> hit_object(const ShapeObject& o, const Eigen::Vector3d& origin,
                                   const Eigen::Vector3d& dir, double tmin) {
  switch (o.kind) {
    case ShapeKind::Sphere:
      return hit_sphere(o, origin, dir, tmin);
    case ShapeKind::Box:
      return hit_box(o, origin, dir, tmin);
    case ShapeKind::Cylinder:
      return hit_cylinder(o, origin, dir, tmin);
  }
  return std::nullopt;
}

}  // namespace

void SyntheticWorld::validate() const {
  std::set<std::uint32_t> ids;
  for (const auto& o : objects) {
    if (o.instance_id == 0) throw DataError("synthetic world: instance id 0 is reserved");
    if (!ids.insert(o.instance_id).second)
      throw DataError("synthetic world: duplicate instance id");
    if (o.dims.minCoeff() <= 0) throw DataError("synthetic world: non-positive dimensions");
  }
}

const ShapeObject* SyntheticWorld::find(std::uint32_t id) const {
  for (const auto& o : objects)
    if (o.instance_id == id) return &o;
  return nullptr;
}

std::optional<RayHit> cast_ray(const SyntheticWorld& world, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir, double tmin) {
  RayHit hit;
  hit.t = std::numeric_limits<double>::infinity();
  for (const auto& o : world.objects) {
    const auto h = hit_object(o, origin, dir, tmin);
    if (h && h->t < hit.t) {
      hit.t = h->t;
      hit.instance_id = o.instance_id;
      hit.normal = h->normal;
      hit.albedo = o.albedo;
    }
  }
  for (const auto& pl : world.background) {
    const double denom = dir.dot(pl.normal);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (pl.point - origin).dot(pl.normal) / denom;
    if (t > tmin && t < hit.t) {
      hit.t = t;
      hit.instance_id = 0;
      hit.normal = denom < 0 ? pl.normal : Eigen::Vector3d(-pl.normal);
      hit.albedo = pl.albedo;
    }
  }
  if (!std::isfinite(hit.t)) return std::nullopt;
  hit.point = origin + hit.t * dir;
  return hit;
}

RaycastResult raycast_frame(const SyntheticWorld& world, const Pose& pose,
                            const Intrinsics& intrinsics) {
  world.validate();
  intrinsics.validate();
  pose.validate();

  const int w = intrinsics.width, h = intrinsics.height;
  RaycastResult out;
  out.frame.color = ColorImage(w, h);
  out.frame.depth = Image(w, h);
  out.frame.pose = pose;
  out.frame.intrinsics = intrinsics;
  out.instance_ids = LabelImage(w, h);

  std::vector<std::size_t> pixels_per_object(world.objects.size(), 0);

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Eigen::Vector3d dir_cam = intrinsics.ray(u, v);
      const Eigen::Vector3d dir_world = pose.rotation * dir_cam;
      const auto hit = cast_ray(world, pose.translation, dir_world);
      if (!hit) continue;
      // dir_cam has unit z, so t equals camera-frame depth.
      out.frame.depth.at(v, u) = hit->t;
      const Eigen::Vector3d c = shade(hit->albedo, hit->normal);
      out.frame.color.r.at(v, u) = c.x();
      out.frame.color.g.at(v, u) = c.y();
      out.frame.color.b.at(v, u) = c.z();
      out.instance_ids.at(v, u) = hit->instance_id;
    }
  }

  // GT masks partition the object pixels.
  for (std::size_t i = 0; i < world.objects.size(); ++i) {
    Mask m(w, h);
    std::size_t n = 0;
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u)
        if (out.instance_ids.at(v, u) == world.objects[i].instance_id) {
          m.set(v, u, true);
          ++n;
        }
    if (n == 0) continue;
    out.observation.masks.push_back(std::move(m));
    out.observation.embeddings.push_back(world.objects[i].embedding);
    out.observation.captions.push_back("object-" + std::to_string(world.objects[i].instance_id));
  }
  return out;
}

double distance_to_surface(const ShapeObject& obj, const Eigen::Vector3d& p) {
  const Eigen::Vector3d pl = obj.rotation.transpose() * (p - obj.center);
  switch (obj.kind) {
    case ShapeKind::Sphere:
      return std::abs(pl.norm() - obj.dims.x());
    case ShapeKind::Box: {
      const Eigen::Vector3d q = pl.cwiseAbs() - obj.dims;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return std::abs(outside + inside);
    }
    case ShapeKind::Cylinder: {
      const double dr = std::hypot(pl.x(), pl.y()) - obj.dims.x();
      const double dz = std::abs(pl.z()) - obj.dims.z();
      const double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
      const double inside = std::min(std::max(dr, dz), 0.0);
      return std::abs(outside + inside);
    }
  }
  return 0.0;
}

std::vector<Eigen::VectorXd> make_embeddings(int count, int dim, std::uint64_t seed,
                                             bool orthogonal) {
  if (orthogonal && count > dim)
    throw ConfigError("cannot draw more orthogonal embeddings than dimensions");
  Rng rng(seed);
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd v(dim);
    for (int d = 0; d < dim; ++d) v[d] = rng.normal();
    if (orthogonal) {
      for (const auto& u : out) v -= u.dot(v) * u;  // Gram-Schmidt
    }
    const double n = v.norm();
    if (n < 1e-9) {
      --i;
      continue;
    }
    out.push_back(v / n);
  }
  return out;
}

namespace {

Intrinsics square_intrinsics(int size) {
  Intrinsics k;
  k.width = size;
  k.height = size;
  k.fx = k.fy = size * 0.9;
  k.cx = (size - 1) / 2.0;
  k.cy = (size - 1) / 2.0;
  return k;
}

std::vector<Pose> orbit_trajectory(const Eigen::Vector3d& target, double radius, double height,
                                   int frames, double arc_radians, double start_angle) {
  std::vector<Pose> poses;
  poses.reserve(frames);
  for (int i = 0; i < frames; ++i) {
    const double a = start_angle + (frames > 1 ? arc_radians * i / (frames - 1) : 0.0);
    const Eigen::Vector3d eye(target.x() + radius * std::cos(a),
                              target.y() + radius * std::sin(a), target.z() + height);
    poses.push_back(Pose::look_at(eye, target));
  }
  return poses;
}

}  // namespace

SceneSpec make_four_object_scene(int frames, int image_size, int embed_dim,
                                 std::uint64_t seed, bool orthogonal_embeddings) {
  SceneSpec spec;
  auto emb = make_embeddings(4, embed_dim, mix_seed(seed, 17), orthogonal_embeddings);

  // Two abutting boxes (shared face), a sphere and a cylinder. The box pair
  // is rotated off the grid axes and the seam sits mid-voxel, so seam voxels
  // genuinely collect observations from both objects.
  const Eigen::Matrix3d pair_rot =
      Eigen::AngleAxisd(0.21, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d pair_center(0.164, 0.012, 0.152);

  ShapeObject box_a;
  box_a.instance_id = 1;
  box_a.kind = ShapeKind::Box;
  box_a.rotation = pair_rot;
  box_a.center = pair_center + pair_rot * Eigen::Vector3d(-0.15, 0, 0);
  box_a.dims = {0.15, 0.15, 0.15};
  box_a.albedo = {0.85, 0.25, 0.2};
  box_a.embedding = emb[0];

  ShapeObject box_b = box_a;
  box_b.instance_id = 2;
  box_b.center = pair_center + pair_rot * Eigen::Vector3d(0.15, 0, 0);
  box_b.albedo = {0.2, 0.45, 0.85};
  box_b.embedding = emb[1];

  ShapeObject sphere;
  sphere.instance_id = 3;
  sphere.kind = ShapeKind::Sphere;
  sphere.center = {-0.45, 0.35, 0.16};
  sphere.dims = {0.16, 0.16, 0.16};
  sphere.albedo = {0.3, 0.8, 0.35};
  sphere.embedding = emb[2];

  ShapeObject cyl;
  cyl.instance_id = 4;
  cyl.kind = ShapeKind::Cylinder;
  cyl.center = {0.1, 0.55, 0.18};
  cyl.dims = {0.12, 0.12, 0.18};
  cyl.albedo = {0.9, 0.8, 0.25};
  cyl.embedding = emb[3];

  spec.world.objects = {box_a, box_b, sphere, cyl};
  spec.world.background.push_back(BackgroundPlane{});  // ground z=0

  spec.intrinsics = square_intrinsics(image_size);
  spec.trajectory = orbit_trajectory({0.0, 0.2, 0.1}, 1.5, 1.0, frames, M_PI * 0.9,
                                     -M_PI * 0.65);
  return spec;
}

SceneSpec make_two_box_scene(int frames, int image_size, int embed_dim, std::uint64_t seed,
                             double embedding_cosine) {
  SceneSpec spec;
  auto base = make_embeddings(2, embed_dim, mix_seed(seed, 23), true);
  const Eigen::VectorXd f_a = base[0];
  const Eigen::VectorXd f_b =
      (embedding_cosine * f_a +
       std::sqrt(std::max(0.0, 1.0 - embedding_cosine * embedding_cosine)) * base[1])
          .normalized();

  // Abutting pair in generic position: the shared face crosses voxels.
  const Eigen::Matrix3d pair_rot =
      Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d pair_center(0.0155, 0.008, 0.162);

  ShapeObject box_a;
  box_a.instance_id = 1;
  box_a.kind = ShapeKind::Box;
  box_a.rotation = pair_rot;
  box_a.center = pair_center + pair_rot * Eigen::Vector3d(-0.16, 0, 0);
  box_a.dims = {0.16, 0.16, 0.16};
  box_a.albedo = {0.8, 0.35, 0.3};
  box_a.embedding = f_a;

  ShapeObject box_b = box_a;
  box_b.instance_id = 2;
  box_b.center = pair_center + pair_rot * Eigen::Vector3d(0.16, 0, 0);
  box_b.albedo = {0.75, 0.4, 0.3};
  box_b.embedding = f_b;

  spec.world.objects = {box_a, box_b};
  spec.world.background.push_back(BackgroundPlane{});

  spec.intrinsics = square_intrinsics(image_size);
  // Start aimed well left of box A so box B is out of frame, then pan right
  // across the seam.
  spec.trajectory.reserve(frames);
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0;
    const Eigen::Vector3d target(-0.75 + 0.95 * s, 0.0, 0.15);
    const Eigen::Vector3d eye(target.x() * 0.4, -1.1, 0.85);
    spec.trajectory.push_back(Pose::look_at(eye, target));
  }
  return spec;
}

SceneSpec make_tilted_plane_scene(int frames, int image_size, int embed_dim,
                                  std::uint64_t seed, double tilt_radians) {
  SceneSpec spec;
  auto emb = make_embeddings(1, embed_dim, mix_seed(seed, 31), false);

  ShapeObject slab;
  slab.instance_id = 1;
  slab.kind = ShapeKind::Box;
  slab.center = {0.0, 0.0, 0.5};
  slab.dims = {0.6, 0.6, 0.02};
  slab.rotation =
      Eigen::AngleAxisd(tilt_radians, Eigen::Vector3d::UnitX()).toRotationMatrix();
  slab.albedo = {0.6, 0.55, 0.5};
  slab.embedding = emb[0];

  spec.world.objects = {slab};
  // No background: depth is invalid off the slab, as a real close-range
  // capture would be.

  spec.intrinsics = square_intrinsics(image_size);
  // Small arc above the slab, looking down at its +z face.
  spec.trajectory.reserve(frames);
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.5;
    const double a = (s - 0.5) * 0.6;
    const Eigen::Vector3d eye(1.1 * std::sin(a), -0.45, 0.5 + 1.05 * std::cos(a));
    spec.trajectory.push_back(Pose::look_at(eye, slab.center));
  }
  return spec;
}

Eigen::Vector3d tilted_plane_normal(double tilt_radians) {
  return Eigen::AngleAxisd(tilt_radians, Eigen::Vector3d::UnitX()).toRotationMatrix() *
         Eigen::Vector3d::UnitZ();
}

SceneSpec make_scene_by_name(const std::string& name, int frames, int image_size,
                             int embed_dim, std::uint64_t seed) {
  if (name == "four-objects") {
    return make_four_object_scene(frames, image_size, embed_dim, seed, false);
  } else if (name == "four-objects-orthogonal") {
    return make_four_object_scene(frames, image_size, embed_dim, seed, true);
  } else if (name == "four-objects-revisit") {
    // Full-circle orbit: the camera returns over already-mapped regions.
    SceneSpec spec = make_four_object_scene(frames, image_size, embed_dim, seed, false);
    spec.trajectory =
        orbit_trajectory({0.0, 0.2, 0.1}, 1.5, 1.0, frames, 2.0 * M_PI, -M_PI * 0.65);
    return spec;
  } else if (name == "two-boxes") {
    return make_two_box_scene(frames, image_size, embed_dim, seed);
  } else if (name == "tilted-plane") {
    return make_tilted_plane_scene(frames, image_size, embed_dim, seed, 0.6);
  }
  throw ConfigError("unknown synthetic scene: " + name);
}

}  // namespace omni
