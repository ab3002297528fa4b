#include <doctest.h>

#include <filesystem>
#include <map>

#include "omni/marching_cubes.hpp"
#include "omni/voxel_grid.hpp"

using namespace omni;

namespace {

// Frame looking down +z at a flat wall.
FrameBundle wall_frame(double wall_z, int size = 64) {
  FrameBundle f;
  f.intrinsics.width = f.intrinsics.height = size;
  f.intrinsics.fx = f.intrinsics.fy = size;
  f.intrinsics.cx = f.intrinsics.cy = (size - 1) / 2.0;
  f.color = ColorImage(size, size, 0.5);
  f.depth = Image(size, size);
  for (int v = 0; v < size; ++v)
    for (int u = 0; u < size; ++u) {
      // Depth is camera z, constant for a fronto-parallel plane.
      f.depth.at(v, u) = wall_z;
    }
  f.timestamp = 0;
  return f;
}

void fill_sphere(VoxelGrid& grid, const Eigen::Vector3d& center, double radius, double band) {
  const double res = grid.resolution();
  const int n = static_cast<int>(std::ceil((radius + band) / res)) + 1;
  const Eigen::Vector3i c0 = (center / res).cast<int>();
  for (int z = c0.z() - n; z <= c0.z() + n; ++z)
    for (int y = c0.y() - n; y <= c0.y() + n; ++y)
      for (int x = c0.x() - n; x <= c0.x() + n; ++x) {
        const VoxelKey key = VoxelKey::from_global(x, y, z);
        const Eigen::Vector3d p = grid.voxel_center(key);
        const double sdf = (p - center).norm() - radius;
        if (std::abs(sdf) > band) continue;
        Voxel& v = grid.at_or_create(key);
        v.tsdf = std::clamp(sdf / grid.truncation(), -1.0, 1.0);
        v.tsdf_weight = 1.0;
        v.color = Eigen::Vector3d(0.5, 0.5, 0.5);
      }
}

}  // namespace

TEST_CASE("world_to_voxel floor quantization") {
  VoxelGrid grid(0.03, 0.12);
  // floor(0.045 / 0.03) = 1
  const VoxelKey k = grid.world_to_voxel({0.045, 0.0, 0.0});
  CHECK(k.global() == Eigen::Vector3i(1, 0, 0));

  const VoxelKey origin = grid.world_to_voxel({0.0, 0.0, 0.0});
  CHECK(origin.global() == Eigen::Vector3i(0, 0, 0));
  CHECK(origin.block == BlockCoord{0, 0, 0});
  CHECK(origin.local == 0);

  CHECK_THROWS_AS(grid.world_to_voxel({std::nan(""), 0, 0}), NumericalError);
}

TEST_CASE("voxel_center stays within the quantization bound") {
  VoxelGrid grid(0.05, 0.2);
  Rng rng(42);
  const double bound = 0.05 / 2.0 * std::sqrt(3.0) + 1e-12;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    const Eigen::Vector3d c = grid.voxel_center(grid.world_to_voxel(p));
    CHECK((c - p).norm() <= bound);
  }
}

TEST_CASE("key decomposition round trips over negative coordinates") {
  for (std::int64_t x : {-17, -8, -1, 0, 7, 8, 23})
    for (std::int64_t y : {-9, 0, 15})
      for (std::int64_t z : {-25, 3}) {
        const VoxelKey k = VoxelKey::from_global(x, y, z);
        CHECK(k.global() == Eigen::Vector3i(x, y, z));
        CHECK(k.local < kBlockVoxels);
      }
}

TEST_CASE("integrate_tsdf reproduces the analytic SDF of a wall") {
  VoxelGrid grid(0.03, 0.12);
  const FrameBundle frame = wall_frame(1.0);
  const auto touched = grid.integrate_tsdf(frame);
  CHECK(!touched.empty());

  // Voxel at the surface: |tsdf| small.
  const Voxel* at_wall = grid.find(grid.world_to_voxel({0.0, 0.0, 0.995}));
  REQUIRE(at_wall != nullptr);
  REQUIRE(at_wall->tsdf_weight > 0);
  CHECK(std::abs(at_wall->tsdf) < 0.2);

  // One truncation in front: tsdf close to +1 (analytic sdf oracle:
  // (1.0 - center_z) / truncation for every updated voxel on the axis).
  const VoxelKey front_key = grid.world_to_voxel({0.0, 0.0, 1.0 - 0.115});
  const Voxel* front = grid.find(front_key);
  REQUIRE(front != nullptr);
  REQUIRE(front->tsdf_weight > 0);
  const double expected = (1.0 - grid.voxel_center(front_key).z()) / 0.12;
  CHECK(front->tsdf == doctest::Approx(expected).epsilon(1e-9));
  CHECK(front->tsdf > 0.9);
}

TEST_CASE("integrate_tsdf is idempotent on re-observation") {
  VoxelGrid grid(0.03, 0.12);
  FrameBundle frame = wall_frame(1.2);
  grid.integrate_tsdf(frame);
  std::map<std::array<int, 3>, std::pair<double, double>> before;
  grid.for_each_voxel([&](const VoxelKey& k, const Voxel& v) {
    if (v.tsdf_weight > 0) {
      const auto g = k.global();
      before[{g.x(), g.y(), g.z()}] = {v.tsdf, v.tsdf_weight};
    }
  });
  frame.timestamp = 1;
  grid.integrate_tsdf(frame);
  grid.for_each_voxel([&](const VoxelKey& k, const Voxel& v) {
    if (v.tsdf_weight <= 0) return;
    const auto g = k.global();
    const auto it = before.find({g.x(), g.y(), g.z()});
    REQUIRE(it != before.end());
    CHECK(std::abs(v.tsdf - it->second.first) <= 1e-12);
    CHECK(v.tsdf_weight == doctest::Approx(2 * it->second.second).epsilon(1e-12));
  });
}

TEST_CASE("integrate_tsdf ignores all-invalid depth") {
  VoxelGrid grid(0.03, 0.12);
  FrameBundle frame = wall_frame(1.0);
  frame.depth.fill(0.0);
  const auto touched = grid.integrate_tsdf(frame);
  CHECK(touched.empty());
  CHECK(grid.allocated_voxel_count() == 0);
}

TEST_CASE("mask_to_voxels back-projects the principal point") {
  VoxelGrid grid(0.03, 0.12);
  FrameBundle frame = wall_frame(1.0, 65);  // odd size -> integer principal point
  frame.intrinsics.cx = frame.intrinsics.cy = 32;
  grid.integrate_tsdf(frame);

  Mask m(65, 65);
  m.set(32, 32, true);
  const auto keys = grid.mask_to_voxels(m, frame.depth, frame.pose, frame.intrinsics);
  REQUIRE(keys.size() == 1);
  CHECK(keys[0] == grid.world_to_voxel({0.0, 0.0, 1.0}));

  SUBCASE("all-false mask is empty") {
    const Mask empty(65, 65);
    CHECK(grid.mask_to_voxels(empty, frame.depth, frame.pose, frame.intrinsics).empty());
  }
  SUBCASE("two pixels can share one voxel") {
    Mask two(65, 65);
    two.set(32, 32, true);
    two.set(32, 33, true);  // 1/65 rad apart, same 3 cm voxel at 1 m
    const auto k2 = grid.mask_to_voxels(two, frame.depth, frame.pose, frame.intrinsics);
    CHECK(k2.size() == 1);
  }
}

TEST_CASE("mask_to_voxels only returns voxels touched this frame") {
  VoxelGrid grid(0.03, 0.12);
  FrameBundle f0 = wall_frame(1.0);
  grid.integrate_tsdf(f0);
  // Frame 1 sees a farther wall; pixels projecting to the old wall's voxels
  // are not re-touched.
  FrameBundle f1 = wall_frame(2.0);
  f1.timestamp = 1;
  grid.integrate_tsdf(f1);

  Mask m(64, 64, true);
  // Depth map of frame 0 back-projects into frame-0 voxels, none touched at t=1.
  const auto keys = grid.mask_to_voxels(m, f0.depth, f0.pose, f0.intrinsics);
  CHECK(keys.empty());
  // The same mask against frame 1's depth works.
  const auto keys1 = grid.mask_to_voxels(m, f1.depth, f1.pose, f1.intrinsics);
  CHECK(!keys1.empty());
}

TEST_CASE("instance_tuple normalizes counts (Dirichlet expectation)") {
  Voxel v;
  v.alpha = {{1, 2}, {2, 1}};
  const InstanceTuple t = instance_tuple(v);
  CHECK(t.of(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(t.of(2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Voxel single;
  single.alpha = {{7, 5}};
  CHECK(instance_tuple(single).of(7) == 1.0);

  CHECK(instance_tuple(Voxel{}).empty());
}

TEST_CASE("instance_tuple equals brute-force frequency for random sequences") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Voxel v;
    std::map<std::uint64_t, std::uint32_t> oracle;
    const int n = 1 + static_cast<int>(rng.uniform_index(40));
    for (int i = 0; i < n; ++i) {
      const std::uint64_t label = 1 + rng.uniform_index(6);
      ++oracle[label];
      auto it = std::find_if(v.alpha.begin(), v.alpha.end(),
                             [&](const auto& p) { return p.first == label; });
      if (it == v.alpha.end()) {
        v.alpha.emplace_back(label, 1);
        std::sort(v.alpha.begin(), v.alpha.end());
      } else {
        ++it->second;
      }
    }
    const InstanceTuple t = instance_tuple(v);
    std::uint64_t total = 0;
    for (const auto& [id, c] : oracle) total += c;
    for (const auto& [id, c] : oracle)
      CHECK(t.of(id) == static_cast<double>(c) / static_cast<double>(total));
  }
}

TEST_CASE("label_query argmax with smallest-id ties") {
  VoxelGrid grid(0.05, 0.2);
  const VoxelKey key = grid.world_to_voxel({0, 0, 0});
  Voxel& v = grid.at_or_create(key);

  v.alpha = {{3, 3}, {5, 2}};
  CHECK(grid.label_query(key) == 3);

  v.alpha = {{3, 2}, {5, 2}};  // tie -> smallest id
  CHECK(grid.label_query(key) == 3);

  CHECK(!grid.label_query(grid.world_to_voxel({5, 5, 5})).has_value());
}

TEST_CASE("new_voxel_set partitions across frames") {
  VoxelGrid grid(0.05, 0.2);
  std::vector<VoxelKey> frame1;
  for (int i = 0; i < 10; ++i) {
    const VoxelKey k = VoxelKey::from_global(i, 0, 0);
    grid.at_or_create(k).alpha = {{1, 1}};
    grid.at_or_create(k).tsdf_weight = 1;
    frame1.push_back(k);
  }
  const auto new1 = grid.new_voxel_set(frame1);
  CHECK(new1.size() == 10);

  // Re-observation: nothing new.
  CHECK(grid.new_voxel_set(frame1).empty());

  // 17 fresh voxels plus re-observations: exactly 17 new.
  std::vector<VoxelKey> frame2 = frame1;
  for (int i = 0; i < 17; ++i) {
    const VoxelKey k = VoxelKey::from_global(i, 3, 0);
    grid.at_or_create(k).alpha = {{2, 1}};
    grid.at_or_create(k).tsdf_weight = 1;
    frame2.push_back(k);
  }
  const auto new2 = grid.new_voxel_set(frame2);
  CHECK(new2.size() == 17);

  // Voxels with no counts never appear.
  const VoxelKey bare = VoxelKey::from_global(50, 50, 50);
  grid.at_or_create(bare).tsdf_weight = 1;
  CHECK(grid.new_voxel_set(std::vector<VoxelKey>{bare}).empty());
}

TEST_CASE("extract_mesh matches the analytic sphere") {
  VoxelGrid grid(0.01, 0.04);
  const Eigen::Vector3d center(0.013, -0.007, 0.019);  // off-grid center
  fill_sphere(grid, center, 0.5, 0.04);
  const TriMesh mesh = extract_mesh(grid);
  REQUIRE(!mesh.empty());

  double max_err = 0;
  for (const auto& v : mesh.vertices)
    max_err = std::max(max_err, std::abs((v - center).norm() - 0.5));
  CHECK(max_err <= 0.01);

  CHECK(mesh.is_watertight());

  // Outward orientation: normals point away from the center.
  std::size_t outward = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Eigen::Vector3d c = (mesh.vertices[mesh.faces[f][0]] +
                               mesh.vertices[mesh.faces[f][1]] +
                               mesh.vertices[mesh.faces[f][2]]) /
                              3.0;
    if (mesh.face_normal(f).dot(c - center) > 0) ++outward;
  }
  CHECK(outward == mesh.faces.size());
}

TEST_CASE("extract_mesh keeps a plane planar") {
  VoxelGrid grid(0.02, 0.08);
  // Analytic SDF of the plane z = 0.5 over a slab of voxels.
  for (int z = 15; z <= 35; ++z)
    for (int y = -10; y <= 10; ++y)
      for (int x = -10; x <= 10; ++x) {
        const VoxelKey k = VoxelKey::from_global(x, y, z);
        Voxel& v = grid.at_or_create(k);
        v.tsdf = std::clamp((0.5 - grid.voxel_center(k).z()) / 0.08, -1.0, 1.0);
        v.tsdf_weight = 1;
      }
  const TriMesh mesh = extract_mesh(grid);
  REQUIRE(!mesh.empty());
  for (const auto& v : mesh.vertices) CHECK(std::abs(v.z() - 0.5) <= 0.02);
}

TEST_CASE("extract_mesh of an empty grid is empty") {
  VoxelGrid grid(0.03, 0.12);
  CHECK(extract_mesh(grid).empty());
}

TEST_CASE("grid snapshot round trips") {
  VoxelGrid grid(0.03, 0.12);
  FrameBundle frame = wall_frame(1.0);
  grid.integrate_tsdf(frame);
  const VoxelKey key = grid.world_to_voxel({0, 0, 1.0});
  grid.find(key)->alpha = {{4, 9}};
  grid.find(key)->registered = true;

  const auto path =
      (std::filesystem::temp_directory_path() / "omni_test_grid.ovxg").string();
  grid.save_snapshot(path);
  const VoxelGrid back = VoxelGrid::load_snapshot(path);
  CHECK(back.resolution() == doctest::Approx(0.03).epsilon(1e-6));
  CHECK(back.block_count() == grid.block_count());
  const Voxel* v = back.find(key);
  REQUIRE(v != nullptr);
  CHECK(v->alpha == std::vector<std::pair<std::uint64_t, std::uint32_t>>{{4, 9}});
  CHECK(v->registered);
  CHECK(v->tsdf == doctest::Approx(grid.find(key)->tsdf).epsilon(1e-6));
}
