#include "omni/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace omni {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b, r = a % b;
  return r != 0 && ((r < 0) != (b < 0)) ? q - 1 : q;
}

}  // namespace

VoxelKey VoxelKey::from_global(std::int64_t vx, std::int64_t vy, std::int64_t vz) {
  VoxelKey k;
  k.block.x = static_cast<std::int32_t>(floor_div(vx, kBlockEdge));
  k.block.y = static_cast<std::int32_t>(floor_div(vy, kBlockEdge));
  k.block.z = static_cast<std::int32_t>(floor_div(vz, kBlockEdge));
  const int lx = static_cast<int>(vx - static_cast<std::int64_t>(k.block.x) * kBlockEdge);
  const int ly = static_cast<int>(vy - static_cast<std::int64_t>(k.block.y) * kBlockEdge);
  const int lz = static_cast<int>(vz - static_cast<std::int64_t>(k.block.z) * kBlockEdge);
  k.local = static_cast<std::uint16_t>(lx + kBlockEdge * (ly + kBlockEdge * lz));
  return k;
}

Eigen::Vector3i VoxelKey::global() const {
  const int lx = local % kBlockEdge;
  const int ly = (local / kBlockEdge) % kBlockEdge;
  const int lz = local / (kBlockEdge * kBlockEdge);
  return {block.x * kBlockEdge + lx, block.y * kBlockEdge + ly, block.z * kBlockEdge + lz};
}

InstanceTuple instance_tuple(const Voxel& voxel) {
  InstanceTuple t;
  const std::uint64_t total = voxel.total_alpha();
  if (total == 0) return t;
  for (const auto& [id, n] : voxel.alpha)
    if (n > 0) t.probabilities[id] = static_cast<double>(n) / static_cast<double>(total);
  return t;
}

VoxelGrid::VoxelGrid(double resolution, double truncation)
    : resolution_(resolution), truncation_(truncation) {
  if (!(resolution > 0)) throw ConfigError("voxel grid: resolution must be positive");
  if (truncation < 2 * resolution)
    throw ConfigError("voxel grid: truncation must be at least 2x resolution");
}

VoxelKey VoxelGrid::world_to_voxel(const Eigen::Vector3d& point) const {
  if (!point.allFinite()) throw NumericalError("world_to_voxel: non-finite point");
  return VoxelKey::from_global(static_cast<std::int64_t>(std::floor(point.x() / resolution_)),
                               static_cast<std::int64_t>(std::floor(point.y() / resolution_)),
                               static_cast<std::int64_t>(std::floor(point.z() / resolution_)));
}

Eigen::Vector3d VoxelGrid::voxel_center(const VoxelKey& key) const {
  const Eigen::Vector3i g = key.global();
  return (g.cast<double>() + Eigen::Vector3d::Constant(0.5)) * resolution_;
}

const Voxel* VoxelGrid::find(const VoxelKey& key) const {
  auto it = blocks_.find(key.block);
  return it == blocks_.end() ? nullptr : &it->second.voxels[key.local];
}

Voxel* VoxelGrid::find(const VoxelKey& key) {
  auto it = blocks_.find(key.block);
  return it == blocks_.end() ? nullptr : &it->second.voxels[key.local];
}

Voxel& VoxelGrid::at_or_create(const VoxelKey& key) {
  return blocks_[key.block].voxels[key.local];
}

std::size_t VoxelGrid::allocated_voxel_count() const {
  std::size_t n = 0;
  for (const auto& [c, b] : blocks_)
    for (const auto& v : b.voxels)
      if (v.tsdf_weight > 0) ++n;
  return n;
}

std::vector<BlockCoord> VoxelGrid::sorted_block_coords() const {
  std::vector<BlockCoord> coords;
  coords.reserve(blocks_.size());
  for (const auto& [c, b] : blocks_) coords.push_back(c);
  std::sort(coords.begin(), coords.end());
  return coords;
}

const VoxelBlock* VoxelGrid::find_block(const BlockCoord& c) const {
  auto it = blocks_.find(c);
  return it == blocks_.end() ? nullptr : &it->second;
}

std::vector<VoxelKey> VoxelGrid::integrate_tsdf(const FrameBundle& frame) {
  frame.validate();
  current_frame_ = frame.timestamp;

  const Intrinsics& K = frame.intrinsics;
  const Pose& pose = frame.pose;
  const int w = K.width, h = K.height;

  // Allocation pass: march each ray through the truncation band around the
  // surface sample, allocating blocks it crosses.
  BlockCoord cached{INT32_MAX, INT32_MAX, INT32_MAX};
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double z = frame.depth.at(v, u);
      if (z <= 0) continue;
      const Eigen::Vector3d dir = K.ray(u, v);  // unit camera z
      const double z0 = std::max(0.0, z - truncation_);
      const double z1 = z + truncation_;
      for (double zz = z0; zz <= z1 + 1e-9; zz += resolution_) {
        const Eigen::Vector3d p = pose.to_world(dir * zz);
        const VoxelKey key = world_to_voxel(p);
        if (!(key.block == cached)) {
          blocks_[key.block];
          cached = key.block;
        }
      }
    }
  }

  // Update pass: project every voxel center of an allocated block.
  std::vector<VoxelKey> touched;
  for (auto& [coord, block] : blocks_) {
    for (int i = 0; i < kBlockVoxels; ++i) {
      VoxelKey key{coord, static_cast<std::uint16_t>(i)};
      const Eigen::Vector3d center = voxel_center(key);
      const Eigen::Vector3d cam = pose.to_camera(center);
      if (cam.z() <= 1e-6) continue;
      const int u = static_cast<int>(std::lround(K.fx * cam.x() / cam.z() + K.cx));
      const int vv = static_cast<int>(std::lround(K.fy * cam.y() / cam.z() + K.cy));
      if (u < 0 || u >= w || vv < 0 || vv >= h) continue;
      const double depth = frame.depth.at(vv, u);
      if (depth <= 0) continue;
      const double sdf = depth - cam.z();
      if (std::abs(sdf) > truncation_) continue;

      Voxel& vox = block.voxels[i];
      const double sample = std::clamp(sdf / truncation_, -1.0, 1.0);
      const double w_old = vox.tsdf_weight;
      vox.tsdf = std::clamp((vox.tsdf * w_old + sample) / (w_old + 1.0), -1.0, 1.0);
      const Eigen::Vector3d c(frame.color.r.at(vv, u), frame.color.g.at(vv, u),
                              frame.color.b.at(vv, u));
      vox.color = (vox.color * w_old + c) / (w_old + 1.0);
      vox.tsdf_weight = w_old + 1.0;
      vox.last_touch = frame.timestamp;
      touched.push_back(key);
    }
  }
  std::sort(touched.begin(), touched.end());
  return touched;
}

std::vector<VoxelKey> VoxelGrid::mask_to_voxels(const Mask& mask, const Image& depth,
                                                const Pose& pose,
                                                const Intrinsics& intrinsics) const {
  if (!mask.empty() && (mask.width() != depth.width() || mask.height() != depth.height()))
    throw DataError("mask_to_voxels: mask and depth sizes differ");

  std::vector<VoxelKey> keys;
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (!mask.get(v, u)) continue;
      const double z = depth.at(v, u);
      if (z <= 0) continue;
      const Eigen::Vector3d p = pose.to_world(intrinsics.ray(u, v) * z);
      const VoxelKey key = world_to_voxel(p);
      const Voxel* vox = find(key);
      if (!vox || vox->last_touch != current_frame_) continue;
      keys.push_back(key);
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

std::vector<VoxelKey> VoxelGrid::new_voxel_set(std::span<const VoxelKey> touched) {
  std::vector<VoxelKey> keys(touched.begin(), touched.end());
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  std::vector<VoxelKey> fresh;
  for (const VoxelKey& key : keys) {
    Voxel* vox = find(key);
    if (!vox || vox->emitted_new || vox->total_alpha() == 0) continue;
    vox->emitted_new = true;
    fresh.push_back(key);
  }
  return fresh;
}

std::optional<std::uint64_t> VoxelGrid::label_query(const VoxelKey& key) const {
  const Voxel* vox = find(key);
  if (!vox || vox->alpha.empty()) return std::nullopt;
  std::uint64_t best_id = 0;
  std::uint32_t best_n = 0;
  for (const auto& [id, n] : vox->alpha) {
    // alpha is sorted by id, so strict > keeps the smallest id on ties.
    if (n > best_n) {
      best_n = n;
      best_id = id;
    }
  }
  if (best_n == 0) return std::nullopt;
  return best_id;
}

// --- Snapshot ("OVXG") -----------------------------------------------------------

namespace {

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void VoxelGrid::save_snapshot(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open grid snapshot for writing: " + path);
  f.write("OVXG", 4);
  put<std::uint32_t>(f, 1);
  put<float>(f, static_cast<float>(resolution_));
  put<std::uint64_t>(f, blocks_.size());

  for (const BlockCoord& c : sorted_block_coords()) {
    const VoxelBlock& block = blocks_.at(c);
    put<std::int32_t>(f, c.x);
    put<std::int32_t>(f, c.y);
    put<std::int32_t>(f, c.z);
    for (const Voxel& v : block.voxels) {
      put<float>(f, static_cast<float>(v.tsdf));
      put<float>(f, static_cast<float>(v.tsdf_weight));
      put<float>(f, static_cast<float>(v.color.x()));
      put<float>(f, static_cast<float>(v.color.y()));
      put<float>(f, static_cast<float>(v.color.z()));
      std::uint8_t flags = (v.registered ? 1 : 0) | (v.emitted_new ? 2 : 0);
      put<std::uint8_t>(f, flags);
      put<std::uint16_t>(f, static_cast<std::uint16_t>(v.alpha.size()));
      for (const auto& [id, n] : v.alpha) {
        put<std::uint64_t>(f, id);
        put<std::uint32_t>(f, n);
      }
    }
  }
}

VoxelGrid VoxelGrid::load_snapshot(const std::string& path, double truncation_ratio,
                                   double resolution_override) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open grid snapshot: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "OVXG", 4) != 0) throw DataError("bad grid snapshot magic: " + path);
  const auto version = get<std::uint32_t>(f);
  if (version != 1) throw DataError("unsupported grid snapshot version: " + path);
  const float stored = get<float>(f);
  double resolution = stored;
  if (resolution_override > 0) {
    if (std::abs(resolution_override - stored) > 1e-5 * stored)
      throw DataError("grid snapshot resolution does not match the override: " + path);
    resolution = resolution_override;
  }
  const auto n_blocks = get<std::uint64_t>(f);

  VoxelGrid grid(resolution, truncation_ratio * resolution);
  for (std::uint64_t b = 0; b < n_blocks; ++b) {
    BlockCoord c;
    c.x = get<std::int32_t>(f);
    c.y = get<std::int32_t>(f);
    c.z = get<std::int32_t>(f);
    VoxelBlock& block = grid.blocks_[c];
    for (Voxel& v : block.voxels) {
      v.tsdf = get<float>(f);
      v.tsdf_weight = get<float>(f);
      v.color.x() = get<float>(f);
      v.color.y() = get<float>(f);
      v.color.z() = get<float>(f);
      const auto flags = get<std::uint8_t>(f);
      v.registered = flags & 1;
      v.emitted_new = flags & 2;
      const auto n = get<std::uint16_t>(f);
      v.alpha.resize(n);
      for (auto& [id, cnt] : v.alpha) {
        id = get<std::uint64_t>(f);
        cnt = get<std::uint32_t>(f);
      }
    }
    if (!f) throw DataError("truncated grid snapshot: " + path);
  }
  return grid;
}

}  // namespace omni
