#include "mvg/triangle_mesh.hpp"

#include <algorithm>
#include <map>
#include <utility>

namespace mvg {

namespace {
std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_use(const TriangleMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      const auto a = t[k], b = t[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  return edges;
}
}  // namespace

long euler_characteristic(const TriangleMesh& mesh) {
  std::vector<char> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles)
    for (auto v : t) used[v] = 1;
  const long v = std::count(used.begin(), used.end(), 1);
  return v - static_cast<long>(edge_use(mesh).size()) + static_cast<long>(mesh.triangles.size());
}

std::size_t boundary_edge_count(const TriangleMesh& mesh) {
  std::size_t n = 0;
  for (const auto& [e, count] : edge_use(mesh)) n += count == 1;
  return n;
}

double triangle_area(const TriangleMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const Vec3& a = mesh.vertices[tri[0]];
  return 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
}

std::vector<Vec3> vertex_normals(const TriangleMesh& mesh) {
  std::vector<Vec3> n(mesh.vertices.size(), Vec3::Zero());
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3 fn = (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a);
    for (auto v : t) n[v] += fn;
  }
  for (auto& v : n) {
    const double len = v.norm();
    if (len > 0.0) v /= len;
  }
  return n;
}

}  // namespace mvg
