#pragma once

#include "omni/mesh.hpp"
#include "omni/voxel_grid.hpp"

namespace omni {

// Marching cubes over the grid's TSDF at its native resolution. Cells are
// emitted only where all eight corners carry weight; vertices are deduplicated
// per grid edge and faces wind so normals follow the TSDF gradient (outward).
TriMesh extract_mesh(const VoxelGrid& grid);

}  // namespace omni
