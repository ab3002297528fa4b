#pragma once

#include <map>
#include <string>

#include "omni/image.hpp"
#include "omni/instance_fusion.hpp"
#include "omni/mesh.hpp"
#include "omni/voxel_grid.hpp"

namespace omni {

// 10*log10(1/MSE) on [0,1] images, capped at the 99 dB sentinel.
double psnr(const Image& a, const Image& b);
double psnr(const ColorImage& a, const ColorImage& b);

struct MeshEvalConfig {
  int samples = 10000;
  double threshold = 0.05;  // meters, for completion ratio and F-score
  std::uint64_t seed = 0;

  void validate() const {
    if (samples <= 0 || threshold <= 0)
      throw ConfigError("mesh eval: samples and threshold must be positive");
  }
};

struct MeshMetrics {
  double acc_cm = 0;      // mean pred->gt distance, centimeters
  double comp_cm = 0;     // mean gt->pred distance, centimeters
  double comp_ratio = 0;  // fraction of gt samples within threshold
  double f_score = 0;     // harmonic mean of precision/recall at threshold
};

MeshMetrics mesh_metrics(const TriMesh& pred, const TriMesh& gt, const MeshEvalConfig& cfg);

// Exact point-to-mesh distance queries over an AABB tree.
class MeshDistanceQuery {
 public:
  explicit MeshDistanceQuery(const TriMesh& mesh);
  double distance(const Eigen::Vector3d& p) const;

 private:
  struct Node {
    Eigen::Vector3d lo, hi;
    int left = -1, right = -1;   // children, or
    int first = 0, count = 0;    // triangle range when leaf
  };
  const TriMesh& mesh_;
  std::vector<int> tri_order_;
  std::vector<Node> nodes_;
  int build(int first, int count, std::vector<Eigen::Vector3d>& centroids);
};

// Area-uniform surface samples.
std::vector<Eigen::Vector3d> sample_mesh_surface(const TriMesh& mesh, int count,
                                                 std::uint64_t seed);

struct ClassScore {
  double iou = 0;
  double recall = 0;
  std::size_t gt_count = 0;
};

struct SemanticEvalReport {
  std::map<std::uint32_t, ClassScore> per_class;
  double miou = 0, fiou = 0, macc = 0, facc = 0;
};

// Voxel-level zero-shot classification: each gt-labeled voxel predicts the
// class whose embedding best matches the codebook entry of the voxel's argmax
// instance; unlabeled voxels count as misses for their gt class.
SemanticEvalReport zero_shot_segmentation(
    const VoxelGrid& grid, const InstanceCodebook& codebook,
    const std::map<std::uint32_t, Eigen::VectorXd>& class_embeddings,
    const std::map<VoxelKey, std::uint32_t>& gt_labels);

// Aligned-column text table (per-scene column plus average).
std::string semantic_report_table(const SemanticEvalReport& report, const std::string& scene);
std::string mesh_report_table(const MeshMetrics& m, const std::string& scene);

}  // namespace omni
