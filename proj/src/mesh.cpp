#include "omni/mesh.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "omni/common.hpp"

namespace omni {

double TriMesh::area() const {
  double a = 0;
  for (const auto& f : faces) {
    const Eigen::Vector3d e1 = vertices[f[1]] - vertices[f[0]];
    const Eigen::Vector3d e2 = vertices[f[2]] - vertices[f[0]];
    a += 0.5 * e1.cross(e2).norm();
  }
  return a;
}

Eigen::Vector3d TriMesh::face_normal(std::size_t f) const {
  const auto& t = faces[f];
  const Eigen::Vector3d n =
      (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
  const double len = n.norm();
  return len > 1e-14 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::Zero();
}

bool TriMesh::is_watertight() const {
  if (faces.empty()) return false;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_count;
  for (const auto& f : faces) {
    for (int i = 0; i < 3; ++i) {
      std::uint32_t a = f[i], b = f[(i + 1) % 3];
      if (a > b) std::swap(a, b);
      if (a == b) return false;  // degenerate face
      ++edge_count[{a, b}];
    }
  }
  for (const auto& [e, n] : edge_count)
    if (n != 2) return false;
  return true;
}

void write_ply(const std::string& path, const TriMesh& mesh) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open PLY for writing: " + path);
  const bool colored = mesh.colors.size() == mesh.vertices.size();
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << mesh.vertices.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  if (colored)
    f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "element face " << mesh.faces.size() << "\n";
  f << "property list uchar int vertex_indices\n";
  f << "end_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    f << static_cast<float>(v.x()) << " " << static_cast<float>(v.y()) << " "
      << static_cast<float>(v.z());
    if (colored) {
      auto q = [](double c) { return static_cast<int>(clamp01(c) * 255.0 + 0.5); };
      f << " " << q(mesh.colors[i].x()) << " " << q(mesh.colors[i].y()) << " "
        << q(mesh.colors[i].z());
    }
    f << "\n";
  }
  for (const auto& face : mesh.faces)
    f << "3 " << face[0] << " " << face[1] << " " << face[2] << "\n";
}

TriMesh read_ply(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open PLY: " + path);
  std::string line;
  std::size_t n_vert = 0, n_face = 0;
  bool colored = false;
  if (!std::getline(f, line) || line != "ply") throw DataError("not a PLY file: " + path);
  while (std::getline(f, line) && line != "end_header") {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "element") {
      std::string what;
      std::size_t n;
      ss >> what >> n;
      if (what == "vertex") n_vert = n;
      if (what == "face") n_face = n;
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      if (name == "red") colored = true;
    } else if (tok == "format" && line.find("ascii") == std::string::npos) {
      throw DataError("only ascii PLY meshes are supported: " + path);
    }
  }
  TriMesh mesh;
  mesh.vertices.resize(n_vert);
  if (colored) mesh.colors.resize(n_vert);
  for (std::size_t i = 0; i < n_vert; ++i) {
    if (!std::getline(f, line)) throw DataError("truncated PLY vertices: " + path);
    std::istringstream ss(line);
    ss >> mesh.vertices[i].x() >> mesh.vertices[i].y() >> mesh.vertices[i].z();
    if (colored) {
      int r, g, b;
      ss >> r >> g >> b;
      mesh.colors[i] = Eigen::Vector3d(r, g, b) / 255.0;
    }
  }
  mesh.faces.resize(n_face);
  for (std::size_t i = 0; i < n_face; ++i) {
    if (!std::getline(f, line)) throw DataError("truncated PLY faces: " + path);
    std::istringstream ss(line);
    int n;
    ss >> n;
    if (n != 3) throw DataError("non-triangular PLY face: " + path);
    ss >> mesh.faces[i][0] >> mesh.faces[i][1] >> mesh.faces[i][2];
  }
  return mesh;
}

}  // namespace omni
