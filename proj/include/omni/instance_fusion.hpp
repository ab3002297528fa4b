#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "omni/frame.hpp"
#include "omni/voxel_grid.hpp"

namespace omni {

// Global instance memory: fused embedding and accumulated credibility per id.
class InstanceCodebook {
 public:
  struct Entry {
    Eigen::VectorXd embedding;
    double weight = 0.0;
  };

  std::uint64_t allocate(const Eigen::VectorXd& embedding);

  bool contains(std::uint64_t id) const { return entries_.count(id) != 0; }
  const Entry& entry(std::uint64_t id) const;
  Entry& entry(std::uint64_t id);
  std::size_t size() const { return entries_.size(); }
  std::uint64_t next_id() const { return next_id_; }
  const std::map<std::uint64_t, Entry>& entries() const { return entries_; }

  void save(const std::string& path) const;
  static InstanceCodebook load(const std::string& path);

 private:
  std::map<std::uint64_t, Entry> entries_;
  std::uint64_t next_id_ = 1;
};

enum class CountingMode {
  kDirichlet,      // Dirichlet pseudocounts
  kLastWriteWins,  // ablation baseline: each write overwrites the label
};

struct FusionConfig {
  double xi = 0.25;         // instance fusion threshold
  double lambda_geo = 0.5;  // geometric weight; embedding weight is 1 - lambda_geo
  CountingMode counting = CountingMode::kDirichlet;

  void validate() const {
    if (xi < 0 || xi > 1) throw ConfigError("fusion: xi must lie in [0,1]");
    if (lambda_geo < 0 || lambda_geo > 1)
      throw ConfigError("fusion: lambda_geo must lie in [0,1]");
  }
};

struct AssociationResult {
  std::size_t mask_index = 0;
  std::uint64_t id = 0;
  double score = 0.0;  // 1.0 for new instances
  bool is_new = false;
  bool skipped = false;  // mask had no valid-depth voxels
  std::vector<VoxelKey> voxels;
};

// Mean of theta[gamma] over the voxel region (accumulated-evidence average).
double geometric_similarity(std::span<const VoxelKey> voxels, std::uint64_t gamma,
                            const VoxelGrid& grid);

// Cosine similarity of two unit vectors.
double embedding_similarity(const Eigen::VectorXd& f_map, const Eigen::VectorXd& f_obs);

// Associates every mask with an existing instance or a new id. New instances
// are seeded into the codebook immediately (weight 0). Read-only on the grid.
std::vector<AssociationResult> associate(const SegObservation& obs, const FrameBundle& frame,
                                         const VoxelGrid& grid, InstanceCodebook& codebook,
                                         const FusionConfig& cfg);

// |V_mask| / |argmax-labeled voxels of the instance| from the grid's current
// (pre-update) state; 1.0 on a zero denominator. Clamped to [0,1].
double visibility_ratio(const AssociationResult& result, const VoxelGrid& grid);
std::vector<double> visibility_ratios(std::span<const AssociationResult> results,
                                      const VoxelGrid& grid);

// Dirichlet counting (or last-write-wins in the ablation mode).
void update_voxels(std::span<const AssociationResult> results, VoxelGrid& grid,
                   CountingMode mode = CountingMode::kDirichlet);

// Credibility-weighted embedding fusion. `ratios` must come from
// visibility_ratios evaluated before update_voxels ran.
void update_codebook(std::span<const AssociationResult> results, const SegObservation& obs,
                     std::span<const double> ratios, InstanceCodebook& codebook);

// Best codebook match by cosine similarity; ties take the smallest id.
std::pair<std::uint64_t, double> retrieve_instance(const Eigen::VectorXd& query,
                                                   const InstanceCodebook& codebook);

// One association-log line: {"t":..,"k":..,"id":..,"score":..,"new":..,"n_voxels":..}
std::string association_log_line(int t, const AssociationResult& r);

}  // namespace omni
