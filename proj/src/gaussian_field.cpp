#include "omni/gaussian_field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace omni {

std::vector<GaussianPrimitive> seed_gaussians(std::span<const VoxelKey> new_voxels,
                                              const VoxelGrid& grid, GaussianField& field) {
  std::vector<GaussianPrimitive> added;
  added.reserve(new_voxels.size());
  for (const VoxelKey& key : new_voxels) {
    const Voxel* vox = grid.find(key);
    if (!vox) continue;
    GaussianPrimitive g;
    g.mu = grid.voxel_center(key);
    g.q = Eigen::Quaterniond::Identity();
    g.color = vox->color.cwiseMax(0.0).cwiseMin(1.0);
    g.scale = Eigen::Vector3d::Constant(0.2 * grid.resolution());
    g.opacity = 0.5;
    field.primitives.push_back(g);
    field.seed_keys.push_back(key);
    added.push_back(g);
  }
  return added;
}

namespace {

// Shared visibility rule for keyframe_ratio and registration.
template <typename F>
void for_each_visible_voxel(const FrameBundle& frame, const VoxelGrid& grid, F&& f) {
  const Intrinsics& K = frame.intrinsics;
  grid.for_each_voxel([&](const VoxelKey& key, const Voxel& v) {
    if (v.tsdf_weight <= 0) return;
    const Eigen::Vector3d cam = frame.pose.to_camera(grid.voxel_center(key));
    if (cam.z() <= 1e-6) return;
    const int u = static_cast<int>(std::lround(K.fx * cam.x() / cam.z() + K.cx));
    const int vv = static_cast<int>(std::lround(K.fy * cam.y() / cam.z() + K.cy));
    if (u < 0 || u >= K.width || vv < 0 || vv >= K.height) return;
    const double d = frame.depth.at(vv, u);
    if (d <= 0) return;
    if (std::abs(cam.z() - d) > grid.truncation()) return;
    f(key, v);
  });
}

}  // namespace

double keyframe_ratio(const FrameBundle& frame, const VoxelGrid& grid) {
  std::size_t visible = 0, unregistered = 0;
  for_each_visible_voxel(frame, grid, [&](const VoxelKey&, const Voxel& v) {
    ++visible;
    if (!v.registered) ++unregistered;
  });
  if (visible == 0) return 1.0;
  return static_cast<double>(unregistered) / static_cast<double>(visible);
}

bool select_keyframe(const FrameBundle& frame, VoxelGrid& grid, const KeyframePolicy& policy,
                     int frames_since_last_kf, KeyframeBuffer& buffer) {
  policy.validate();
  const double tau = keyframe_ratio(frame, grid);
  if (!(tau > policy.tau_threshold || frames_since_last_kf >= policy.n_key)) return false;

  grid.for_each_voxel_mut([&](const VoxelKey& key, Voxel& v) {
    if (v.tsdf_weight <= 0 || v.registered) return;
    const Eigen::Vector3d cam = frame.pose.to_camera(grid.voxel_center(key));
    if (cam.z() <= 1e-6) return;
    const Intrinsics& K = frame.intrinsics;
    const int u = static_cast<int>(std::lround(K.fx * cam.x() / cam.z() + K.cx));
    const int vv = static_cast<int>(std::lround(K.fy * cam.y() / cam.z() + K.cy));
    if (u < 0 || u >= K.width || vv < 0 || vv >= K.height) return;
    const double d = frame.depth.at(vv, u);
    if (d <= 0 || std::abs(cam.z() - d) > grid.truncation()) return;
    v.registered = true;
  });
  buffer.keyframes.push_back(Keyframe{frame, CameraModel{}});
  return true;
}

LossReport optimize_step(GaussianField& field, KeyframeBuffer& buffer,
                         const FrameBundle& current, CameraModel* current_camera,
                         const OptimConfig& cfg, Rng& rng) {
  cfg.validate();
  if (buffer.size() == 0) throw DataError("optimize_step: empty keyframe buffer");
  if (field.size() == 0) throw DataError("optimize_step: empty gaussian field");

  // Batch: the current frame plus keyframes sampled without replacement
  // (excluding the current frame when it sits in the buffer).
  struct View {
    const FrameBundle* frame;
    CameraModel* camera;  // null -> fixed default, no camera update
  };
  CameraModel fixed_default;
  std::vector<View> views;
  views.push_back({&current, current_camera});

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < buffer.size(); ++i)
    if (buffer.keyframes[i].frame.timestamp != current.timestamp) pool.push_back(i);
  const std::size_t n_sample = std::min<std::size_t>(cfg.kf_sample, pool.size());
  for (std::size_t i = 0; i < n_sample; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
    views.push_back({&buffer.keyframes[pool[i]].frame, &buffer.keyframes[pool[i]].camera});
  }

  RenderGradients grads(field.size());
  struct CamGrad {
    double omega_raw = 0, omega_trans = 0, x_trans = 0, y_trans = 0;
  };
  std::vector<CamGrad> cam_grads(views.size());
  LossReport mean;

  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const View& view = views[vi];
    const CameraModel& cam = view.camera ? *view.camera : fixed_default;
    RenderContext ctx =
        make_render_context(field.primitives, view.frame->pose, view.frame->intrinsics);
    RenderGradients view_grads(field.size());
    const LossReport rep = backward(ctx, cam, *view.frame, cfg.weights, view_grads);
    if (!std::isfinite(rep.total))
      throw NumericalError("optimize_step: divergent loss at frame " +
                           std::to_string(view.frame->timestamp));
    mean.rgb += rep.rgb;
    mean.ssim += rep.ssim;
    mean.depth += rep.depth;
    mean.normal += rep.normal;
    mean.total += rep.total;
    for (std::size_t i = 0; i < field.size(); ++i) {
      grads.color[i] += view_grads.color[i];
      grads.opacity[i] += view_grads.opacity[i];
    }
    cam_grads[vi] = {view_grads.omega_raw, view_grads.omega_trans, view_grads.x_trans,
                     view_grads.y_trans};
  }
  const double inv_views = 1.0 / static_cast<double>(views.size());
  mean.rgb *= inv_views;
  mean.ssim *= inv_views;
  mean.depth *= inv_views;
  mean.normal *= inv_views;
  mean.total *= inv_views;

  for (std::size_t i = 0; i < field.size(); ++i) {
    GaussianPrimitive& g = field.primitives[i];
    g.color -= cfg.lr_color * grads.color[i];
    g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
    g.opacity = clamp01(g.opacity - cfg.lr_opacity * grads.opacity[i]);
  }
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    CameraModel* cam = views[vi].camera;
    if (!cam) continue;
    cam->omega_raw = clamp01(cam->omega_raw - cfg.lr_camera * cam_grads[vi].omega_raw);
    cam->omega_trans = clamp01(cam->omega_trans - cfg.lr_camera * cam_grads[vi].omega_trans);
    cam->x_trans -= cfg.lr_camera_trans * cam_grads[vi].x_trans;
    cam->y_trans -= cfg.lr_camera_trans * cam_grads[vi].y_trans;
    if (!std::isfinite(cam->x_trans) || !std::isfinite(cam->y_trans))
      throw NumericalError("optimize_step: camera translation diverged at frame " +
                           std::to_string(views[vi].frame->timestamp));
  }
  return mean;
}

// --- Splat PLY --------------------------------------------------------------------

namespace {

constexpr double kShC0 = 0.28209479177387814;

void put_f32(std::ofstream& f, double v) {
  const float x = static_cast<float>(v);
  f.write(reinterpret_cast<const char*>(&x), 4);
}

}  // namespace

void write_splat_ply(const std::string& path, const GaussianField& field) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open splat PLY for writing: " + path);
  f << "ply\nformat binary_little_endian 1.0\n";
  f << "element vertex " << field.size() << "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
                        "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
                        "rot_2", "rot_3"})
    f << "property float " << p << "\n";
  f << "end_header\n";
  for (const GaussianPrimitive& g : field.primitives) {
    put_f32(f, g.mu.x());
    put_f32(f, g.mu.y());
    put_f32(f, g.mu.z());
    put_f32(f, 0);
    put_f32(f, 0);
    put_f32(f, 0);
    for (int c = 0; c < 3; ++c) put_f32(f, (g.color[c] - 0.5) / kShC0);
    const double o = std::clamp(g.opacity, 1e-6, 1.0 - 1e-6);
    put_f32(f, std::log(o / (1.0 - o)));
    for (int c = 0; c < 3; ++c) put_f32(f, std::log(g.scale[c]));
    const Eigen::Quaterniond q = g.q.normalized();
    put_f32(f, q.w());
    put_f32(f, q.x());
    put_f32(f, q.y());
    put_f32(f, q.z());
  }
}

GaussianField read_splat_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open splat PLY: " + path);
  std::string line;
  std::size_t count = 0;
  int n_props = 0;
  if (!std::getline(f, line) || line != "ply") throw DataError("not a PLY file: " + path);
  while (std::getline(f, line) && line != "end_header") {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "element") {
      std::string what;
      ss >> what >> count;
    } else if (tok == "property") {
      ++n_props;
    }
  }
  if (n_props != 17) throw DataError("unexpected splat PLY layout: " + path);

  GaussianField field;
  field.primitives.resize(count);
  for (auto& g : field.primitives) {
    float v[17];
    f.read(reinterpret_cast<char*>(v), sizeof(v));
    if (!f) throw DataError("truncated splat PLY: " + path);
    g.mu = {v[0], v[1], v[2]};
    for (int c = 0; c < 3; ++c) g.color[c] = clamp01(v[6 + c] * kShC0 + 0.5);
    g.opacity = 1.0 / (1.0 + std::exp(-static_cast<double>(v[9])));
    g.scale = {std::exp(static_cast<double>(v[10])), std::exp(static_cast<double>(v[11])),
               std::exp(static_cast<double>(v[12]))};
    g.q = Eigen::Quaterniond(v[13], v[14], v[15], v[16]).normalized();
  }
  field.seed_keys.assign(count, VoxelKey{});
  return field;
}

}  // namespace omni
