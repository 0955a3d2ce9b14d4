#pragma once

#include <cstdint>
#include <vector>

#include "mvg/core.hpp"
#include "mvg/triangle_mesh.hpp"

namespace mvg {

/// Node-sampled scalar field, x fastest.
struct ScalarGrid {
  int nx = 0, ny = 0, nz = 0;
  std::vector<double> values;

  ScalarGrid() = default;
  ScalarGrid(int x, int y, int z, double fill = 0.0)
      : nx(x), ny(y), nz(z), values(static_cast<std::size_t>(x) * y * z, fill) {}

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  double& operator()(int i, int j, int k) { return values[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return values[index(i, j, k)]; }
};

/// Isosurface of `field` at `iso`; node (i, j, k) sits at origin + voxel * (i, j, k).
/// Triangles wind so their normals follow the field gradient. Vertices on a
/// shared cell edge are emitted once. When `node_active` is given, cells with
/// an inactive corner are skipped.
TriangleMesh marching_cubes(const ScalarGrid& field, double iso, double voxel, const Vec3& origin,
                            const std::vector<std::uint8_t>* node_active = nullptr);

}  // namespace mvg
