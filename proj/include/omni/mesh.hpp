#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace omni {

struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3d> colors;  // [0,1], parallel to vertices (may be empty)
  std::vector<std::array<std::uint32_t, 3>> faces;

  bool empty() const { return faces.empty(); }
  double area() const;
  Eigen::Vector3d face_normal(std::size_t f) const;

  // True when every undirected edge is shared by exactly two faces.
  bool is_watertight() const;
};

void write_ply(const std::string& path, const TriMesh& mesh);
TriMesh read_ply(const std::string& path);

}  // namespace omni
