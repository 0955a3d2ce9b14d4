#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mvg/core.hpp"

namespace mvg {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Vec3> normals;  // optional, per vertex

  bool empty() const { return triangles.empty(); }
};

/// V - E + F over unique undirected edges.
long euler_characteristic(const TriangleMesh& mesh);

/// Number of edges used by exactly one triangle.
std::size_t boundary_edge_count(const TriangleMesh& mesh);

double triangle_area(const TriangleMesh& mesh, std::size_t t);

/// Area-weighted vertex normals from triangle winding.
std::vector<Vec3> vertex_normals(const TriangleMesh& mesh);

}  // namespace mvg
