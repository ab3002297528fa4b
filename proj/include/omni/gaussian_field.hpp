#pragma once

#include <span>
#include <string>
#include <vector>

#include "omni/gaussian.hpp"
#include "omni/splat_render.hpp"
#include "omni/voxel_grid.hpp"

namespace omni {

struct GaussianField {
  std::vector<GaussianPrimitive> primitives;
  std::vector<VoxelKey> seed_keys;  // parallel to primitives

  std::size_t size() const { return primitives.size(); }
};

// One Gaussian per newly assigned voxel: center at the voxel center, the TSDF
// color, isotropic scale 0.2x the voxel size, opacity 0.5, identity rotation.
// No densification or pruning ever happens afterwards.
std::vector<GaussianPrimitive> seed_gaussians(std::span<const VoxelKey> new_voxels,
                                              const VoxelGrid& grid, GaussianField& field);

struct KeyframePolicy {
  double tau_threshold = 0.15;
  int n_key = 10;

  void validate() const {
    if (tau_threshold < 0 || tau_threshold > 1)
      throw ConfigError("keyframe policy: tau_threshold must lie in [0,1]");
    if (n_key <= 0) throw ConfigError("keyframe policy: n_key must be positive");
  }
};

struct Keyframe {
  FrameBundle frame;
  CameraModel camera;
};

struct KeyframeBuffer {
  std::vector<Keyframe> keyframes;
  std::size_t size() const { return keyframes.size(); }
};

// Fraction of visible allocated voxels that no keyframe has registered yet.
// Visibility: center projects inside the image with camera depth within the
// truncation of the frame's depth sample. Returns 1 when nothing is visible.
double keyframe_ratio(const FrameBundle& frame, const VoxelGrid& grid);

// True iff tau exceeds the threshold or too many frames passed since the last
// keyframe; on insertion all visible voxels become registered and the frame
// joins the buffer with a fresh CameraModel.
bool select_keyframe(const FrameBundle& frame, VoxelGrid& grid, const KeyframePolicy& policy,
                     int frames_since_last_kf, KeyframeBuffer& buffer);

struct OptimConfig {
  double lr_color = 2.5e-3;
  double lr_opacity = 5e-2;
  double lr_camera = 1e-3;        // exposure weights
  double lr_camera_trans = 0.5;   // pixel-scale translation parameters
  int iters_per_frame = 1;
  int warmup_iters = 1000;
  int kf_sample = 19;
  LossWeights weights;

  void validate() const {
    if (lr_color < 0 || lr_opacity < 0 || lr_camera < 0 || lr_camera_trans < 0)
      throw ConfigError("optimizer: learning rates must be non-negative");
    if (iters_per_frame <= 0 || warmup_iters <= 0 || kf_sample < 0)
      throw ConfigError("optimizer: iteration counts must be positive");
  }
};

// One gradient step over the current frame plus sampled keyframes. Color and
// opacity update on every primitive (clamped to [0,1]); each sampled
// keyframe's camera model updates as well. `current_camera` may be null for
// non-keyframe frames, which render under a fixed default model.
LossReport optimize_step(GaussianField& field, KeyframeBuffer& buffer,
                         const FrameBundle& current, CameraModel* current_camera,
                         const OptimConfig& cfg, Rng& rng);

// De-facto splat interchange PLY (binary little endian): x,y,z, nx,ny,nz
// (zeros), f_dc_0..2, opacity logit, log scales, rotation wxyz.
void write_splat_ply(const std::string& path, const GaussianField& field);
GaussianField read_splat_ply(const std::string& path);

}  // namespace omni
