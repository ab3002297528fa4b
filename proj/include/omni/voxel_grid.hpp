#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "omni/frame.hpp"

namespace omni {

inline constexpr int kBlockEdge = 8;
inline constexpr int kBlockVoxels = kBlockEdge * kBlockEdge * kBlockEdge;

struct BlockCoord {
  std::int32_t x = 0, y = 0, z = 0;
  bool operator==(const BlockCoord&) const = default;
  auto operator<=>(const BlockCoord&) const = default;
};

struct BlockCoordHash {
  std::size_t operator()(const BlockCoord& c) const {
    // Spatial hash with large primes.
    const std::uint64_t h = static_cast<std::uint64_t>(c.x) * 73856093ULL ^
                            static_cast<std::uint64_t>(c.y) * 19349669ULL ^
                            static_cast<std::uint64_t>(c.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

// Global integer voxel coordinate and its block/local decomposition.
struct VoxelKey {
  BlockCoord block;
  std::uint16_t local = 0;

  bool operator==(const VoxelKey&) const = default;
  auto operator<=>(const VoxelKey&) const = default;

  static VoxelKey from_global(std::int64_t vx, std::int64_t vy, std::int64_t vz);
  Eigen::Vector3i global() const;
};

struct Voxel {
  double tsdf = 0.0;         // truncation units, in [-1, 1]
  double tsdf_weight = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  // Sparse instance counts, sorted by id.
  std::vector<std::pair<std::uint64_t, std::uint32_t>> alpha;
  bool registered = false;
  bool emitted_new = false;  // already returned by new_voxel_set
  std::int32_t last_touch = -1;

  std::uint64_t total_alpha() const {
    std::uint64_t s = 0;
    for (const auto& [id, n] : alpha) s += n;
    return s;
  }
  std::uint32_t count_of(std::uint64_t id) const {
    for (const auto& [gid, n] : alpha)
      if (gid == id) return n;
    return 0;
  }
};

// Normalized Dirichlet expectation over a voxel's counts.
struct InstanceTuple {
  std::map<std::uint64_t, double> probabilities;
  bool empty() const { return probabilities.empty(); }
  double of(std::uint64_t id) const {
    auto it = probabilities.find(id);
    return it == probabilities.end() ? 0.0 : it->second;
  }
};

InstanceTuple instance_tuple(const Voxel& voxel);

struct VoxelBlock {
  std::vector<Voxel> voxels = std::vector<Voxel>(kBlockVoxels);
};

class VoxelGrid {
 public:
  VoxelGrid(double resolution, double truncation);

  double resolution() const { return resolution_; }
  double truncation() const { return truncation_; }
  int current_frame() const { return current_frame_; }

  VoxelKey world_to_voxel(const Eigen::Vector3d& point) const;
  Eigen::Vector3d voxel_center(const VoxelKey& key) const;

  // Projective TSDF update; allocates blocks on demand and returns every voxel
  // whose weight increased, in deterministic sorted order.
  std::vector<VoxelKey> integrate_tsdf(const FrameBundle& frame);

  // Back-projects the mask and keeps voxels touched by this frame's TSDF pass.
  std::vector<VoxelKey> mask_to_voxels(const Mask& mask, const Image& depth, const Pose& pose,
                                       const Intrinsics& intrinsics) const;

  // Voxels in `touched` whose instance counts became positive and that were
  // never reported before. Each voxel appears in at most one frame's set.
  std::vector<VoxelKey> new_voxel_set(std::span<const VoxelKey> touched);

  std::optional<std::uint64_t> label_query(const VoxelKey& key) const;

  const Voxel* find(const VoxelKey& key) const;
  Voxel* find(const VoxelKey& key);
  Voxel& at_or_create(const VoxelKey& key);

  std::size_t block_count() const { return blocks_.size(); }
  std::size_t allocated_voxel_count() const;  // voxels with tsdf_weight > 0

  template <typename F>
  void for_each_voxel(F&& f) const {
    for (const auto& [coord, block] : blocks_) {
      for (int i = 0; i < kBlockVoxels; ++i) {
        VoxelKey key{coord, static_cast<std::uint16_t>(i)};
        f(key, block.voxels[i]);
      }
    }
  }
  template <typename F>
  void for_each_voxel_mut(F&& f) {
    for (auto& [coord, block] : blocks_) {
      for (int i = 0; i < kBlockVoxels; ++i) {
        VoxelKey key{coord, static_cast<std::uint16_t>(i)};
        f(key, block.voxels[i]);
      }
    }
  }
  // Blocks in sorted coordinate order (for deterministic serialization).
  std::vector<BlockCoord> sorted_block_coords() const;
  const VoxelBlock* find_block(const BlockCoord& c) const;

  void save_snapshot(const std::string& path) const;
  // The header stores resolution as float32; pass the run's full-precision
  // value to keep quantization bit-compatible with the build.
  static VoxelGrid load_snapshot(const std::string& path, double truncation_ratio = 4.0,
                                 double resolution_override = 0.0);

 private:
  double resolution_;
  double truncation_;
  int current_frame_ = -1;
  std::unordered_map<BlockCoord, VoxelBlock, BlockCoordHash> blocks_;
};

}  // namespace omni
