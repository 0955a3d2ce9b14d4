#pragma once

#include <array>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "mvg/core.hpp"
#include "mvg/marching_cubes.hpp"
#include "mvg/triangle_mesh.hpp"

namespace mvg::meshing {

struct BBox {
  Vec3 lo = Vec3::Constant(-std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::infinity());

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  BBox dilated(double r) const { return {lo.array() - r, hi.array() + r}; }
};

struct MeshConfig {
  BBox bbox;
  double base_voxel = 0.003;  // m
  double voxel_min = 0.001;   // m
  double voxel_max = 0.005;   // m
  int smooth_steps = 2;
  int floater_knn = 8;
  double floater_sigma = 2.0;
  double iso = 0.5;
  bool smooth_mesh = true;        // 3x3x3 box filter on the voxel field
  bool laplacian_smooth = false;  // extra umbrella smoothing of the mesh
  int laplacian_iterations = 3;
  double normal_blend = 0.5;  // weight of the view normal per visit
  double relax_lambda = 0.5;  // fraction of the tangent-plane offset removed
  int smooth_knn = 8;

  void validate() const;
  /// Block edge length in meters.
  double block_size() const { return 32.0 * base_voxel; }
};

SurfelCloud crop(const SurfelCloud& cloud, const BBox& box);

/// Statistical outlier removal: drops points whose mean distance to their
/// k nearest neighbours exceeds mean + sigma * std of that statistic.
SurfelCloud remove_floaters(const SurfelCloud& cloud, int k, double sigma);

/// Crop then remove floaters. Throws EmptyCloudError when nothing survives.
SurfelCloud crop_and_filter(const SurfelCloud& cloud, const MeshConfig& cfg);

struct SmoothStats {
  std::size_t invisible = 0;  // points seen by no view
};

/// Per step and view: blend each visible point's normal toward the view's
/// world-frame normal, then move it toward the plane through its neighbours'
/// centroid. `normal_maps[i]` holds camera-frame normals of `views[i]`.
SurfelCloud multiview_normal_smooth(const SurfelCloud& cloud, const std::vector<View>& views,
                                    const std::vector<NormalMap>& normal_maps,
                                    const MeshConfig& cfg, SmoothStats* stats = nullptr);

using BlockKey = std::array<int, 3>;

/// Block containing p on the global lattice of edge `block_size`.
BlockKey block_of(const Vec3& p, double block_size);

/// Voxel size per occupied block; denser blocks get smaller voxels.
std::map<BlockKey, double> adaptive_voxel_sizes(const SurfelCloud& cloud, const MeshConfig& cfg);

/// Voxel field of one block: node (i, j, k) sits at origin + voxel * (i, j, k).
struct BlockField {
  BlockKey key{};
  int n = 0;  // cells per axis; nodes per axis is n + 1
  double voxel = 0.0;
  Vec3 origin = Vec3::Zero();
  ScalarGrid value;   // occupancy in [0, 1], 1 inside
  ScalarGrid weight;  // normalised splat density in [0, 1]
};

/// Splats every point into the block. `weight` is a Gaussian splat density
/// normalised by its 99th percentile; `value` is a signed occupancy built from
/// the splat-weighted distance to the points' tangent planes.
BlockField occupancy_from_points(const SurfelCloud& cloud, const BlockKey& key, double block_size,
                                 int n, bool smooth);

struct MeshStats {
  std::size_t input_points = 0;
  std::size_t kept_points = 0;
  std::size_t invisible_points = 0;
  std::size_t blocks = 0;
  std::map<double, std::size_t> blocks_per_voxel;
  std::size_t welded = 0;
  std::size_t degenerate_removed = 0;
  std::size_t slivers_filled = 0;
};

/// Crop, filter, smooth, voxelise per block, polygonise, weld seams and clean.
/// `normal_maps` may be empty, which disables multi-view smoothing.
TriangleMesh extract_mesh(const SurfelCloud& cloud, const std::vector<View>& views,
                          const std::vector<NormalMap>& normal_maps, const MeshConfig& cfg,
                          MeshStats* stats = nullptr);

/// Merges each flagged vertex into the lowest-index earlier vertex within
/// `tol`. Vertices sharing a `group` id never merge directly. Merged vertices
/// are removed, triangles remapped and degenerate ones dropped; returns the
/// old-to-new index map.
std::vector<std::uint32_t> weld_vertices(TriangleMesh& mesh, double tol,
                                         const std::vector<std::uint8_t>& weldable,
                                         const std::vector<int>* group = nullptr);

/// Removes triangles with repeated indices or zero area.
std::size_t remove_degenerate(TriangleMesh& mesh);

/// Closes boundary loops of at most `max_loop` vertices whose vertices are
/// all flagged. Returns the number of loops closed.
std::size_t fill_sliver_holes(TriangleMesh& mesh, const std::vector<std::uint8_t>& flagged,
                              std::size_t max_loop = 64);

/// Umbrella-operator smoothing of vertex positions.
void laplacian_smooth(TriangleMesh& mesh, int iterations, double lambda = 0.5);

}  // namespace mvg::meshing
