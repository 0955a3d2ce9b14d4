#pragma once

#include <array>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mvg/consistency.hpp"
#include "mvg/core.hpp"
#include "mvg/quantile.hpp"
#include "mvg/refine.hpp"

namespace mvg::densify {

/// Y_0^0 basis constant, 1 / (2 sqrt(pi)).
inline constexpr double kC0 = 0.28209479177387814;

struct DensifyConfig {
  int interval = 100;             // iterations between densification events
  double scale_threshold = 0.05;  // m; larger primitives open their footprint
  std::size_t max_new_per_view = 200000;
  int stride = 2;  // px
  double init_opacity = 0.1;
  int knn_k = 3;

  void validate() const;
};

/// Unit quaternion whose rotation maps r onto n. Antipodal inputs rotate by
/// pi about the canonical perpendicular of r.
Quat rotation_from_normal(const Vec3& n, const Vec3& r = Vec3::UnitZ());

/// Unit vector perpendicular to r, built from the coordinate axis least
/// aligned with it.
Vec3 canonical_perpendicular(const Vec3& r);

Vec3 rgb_to_sh0(const Vec3& rgb);
Vec3 sh0_to_rgb(const Vec3& sh0);

/// Mean distance to the k nearest other points, floored at 1e-6 m.
std::vector<double> scale_from_neighbors(std::span<const Vec3> points, int k);

struct DensifyBatch {
  SurfelCloud surfels;
  std::vector<std::array<int, 2>> pixels;  // source pixel of each surfel
  std::size_t skipped_no_normal = 0;
};

/// New surfels from masked pixels on the stride lattice. `normals` are in the
/// camera frame of `ref`.
DensifyBatch densify_from_depth(const View& ref, const DepthMap& refined_depth, const Mask& mask,
                                const NormalMap& normals, const DensifyConfig& cfg);

struct DensifyParams {
  quantile::KdeConfig kde;
  consistency::RegionThresholds thresholds;
  DensifyConfig densify;
  refine::RefineConfig refine;
};

struct ViewReport {
  int id = 0;
  bool processed = false;
  std::string error;  // non-empty when the view was skipped
  std::size_t new_near = 0, new_mid = 0, new_far = 0;
  std::size_t rejected = 0;     // valid pixels failing consistency
  std::size_t reset = 0;        // pre-existing surfels reinitialised
  std::size_t skipped_no_normal = 0;
  double q_near = 0.0, q_far = 0.0;
};

struct DensifyReport {
  std::vector<ViewReport> views;
  std::size_t new_near = 0, new_mid = 0, new_far = 0;
  std::map<int, Mask> masks;  // consistency pass mask per densified view

  std::size_t total_new() const { return new_near + new_mid + new_far; }
};

/// Views already densified; adaptive_densify skips them.
struct DensifyState {
  std::set<int> processed_ids;
};

/// Per-view refined depth and camera-frame normals.
struct RefinedView {
  DepthMap depth;
  NormalMap normals;
};

RefinedView refine_view(const View& v, const refine::RefineConfig& cfg);

/// Footprint mask in `ref` of surfels whose larger scale exceeds the threshold.
Mask large_primitive_footprint(const SurfelCloud& cloud, const View& ref, double scale_threshold);

/// One deterministic pass over every unprocessed view in ascending id.
/// Returns the grown cloud; `scene` order is preserved and new surfels append.
SurfelCloud adaptive_densify(const SurfelCloud& scene, const std::vector<View>& views,
                             const DensifyParams& params, DensifyState& state,
                             DensifyReport* report = nullptr,
                             std::map<int, RefinedView>* refined_out = nullptr);

}  // namespace mvg::densify
