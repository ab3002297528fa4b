#pragma once

#include <map>
#include <string>
#include <vector>

#include "omni/config.hpp"
#include "omni/eval_metrics.hpp"
#include "omni/gaussian_field.hpp"
#include "omni/instance_fusion.hpp"
#include "omni/synthetic.hpp"
#include "omni/voxel_grid.hpp"

namespace omni {

struct StageTiming {
  std::string stage;
  double ms = 0;
};

struct FrameTiming {
  int t = 0;
  std::vector<StageTiming> stages;
};

struct RunReport {
  std::vector<std::string> stage_order;
  std::vector<FrameTiming> frames;
  std::size_t final_voxels = 0, final_blocks = 0, final_instances = 0,
              final_gaussians = 0, final_keyframes = 0;
  std::string loss_trace_path;

  std::string to_json() const;
  // Median wall time of the named stage across frames, in milliseconds.
  double median_stage_ms(const std::string& stage) const;
  double median_frame_ms() const;
};

struct BuildResult {
  VoxelGrid grid;
  InstanceCodebook codebook;
  GaussianField field;
  KeyframeBuffer keyframes;
  RunReport report;
  SceneSpec scene;  // synthetic runs only
  bool has_scene = false;

  BuildResult(double resolution, double truncation) : grid(resolution, truncation) {}
};

// Runs the full per-frame loop (segment -> integrate -> associate -> evolve ->
// seed -> keyframe -> optimize) and persists every artifact under cfg.out_dir.
BuildResult run_build(const PipelineConfig& cfg);

// Renders color/depth/normal PNGs at the run's training poses under an
// identity camera model.
void run_render(const std::string& artifacts_dir, const std::string& render_dir);

struct EvalReport {
  double mean_psnr = 0;
  double mean_ssim = 0;
  MeshMetrics mesh;
  SemanticEvalReport semantic;
  std::string to_json() const;
};

// Rendering, mesh (re-fused at 0.01 m from rendered depth), and zero-shot
// semantic metrics against the run's ground truth.
EvalReport run_eval(const std::string& artifacts_dir, const std::string& eval_dir);

// Writes a synthetic dataset in the replay format, including gt sidecars.
void run_synth(const PipelineConfig& cfg, const std::string& dataset_dir);

// --- Ground-truth helpers ------------------------------------------------------

// Projects per-pixel ground-truth instance ids through the frames' depth into
// allocated voxels and keeps the per-voxel majority; ties are skipped as
// ambiguous. This is what an error-free labeler would produce from the same
// observations.
std::map<VoxelKey, std::uint32_t> gt_labels_from_frames(
    const std::vector<FrameBundle>& frames, const std::vector<LabelImage>& instance_images,
    const VoxelGrid& grid);

std::map<std::uint32_t, Eigen::VectorXd> class_embeddings_from_world(
    const SyntheticWorld& world);

// Fuses depth/color frames into a fresh grid (used by the mesh protocol).
VoxelGrid fuse_frames(const std::vector<FrameBundle>& frames, double resolution,
                      double truncation);

}  // namespace omni
