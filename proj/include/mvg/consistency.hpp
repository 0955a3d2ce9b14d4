#pragma once

#include <optional>
#include <vector>

#include "mvg/core.hpp"
#include "mvg/quantile.hpp"

namespace mvg::consistency {

struct Thresholds {
  double pixel_tol = 1.0;       // px
  double rel_depth_tol = 0.01;  // |d' - d| / d
  int min_views = 3;            // source votes required

  void validate() const;
  bool operator==(const Thresholds&) const = default;
};

struct RegionThresholds {
  Thresholds near{1.0, 0.01, 3};
  Thresholds mid{1.0, 0.001, 3};
  Thresholds far{1.0, 0.01, 3};

  void validate() const;
  /// Same thresholds in every region.
  static RegionThresholds uniform(const Thresholds& t) { return {t, t, t}; }
  bool operator==(const RegionThresholds&) const = default;
};

/// Source depth lookup. Nearest re-anchors the return ray at the rounded
/// pixel; Bilinear keeps the continuous pixel and interpolates, using the
/// nearest pixel where the 2x2 support is incomplete.
enum class Sampling { Nearest, Bilinear };

struct CycleResult {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// ref pixel -> source pixel -> back into ref, using the source's own depth.
/// Empty when the source abstains (behind camera, out of frame, invalid depth).
/// A view cycled against itself returns its input bit-exactly.
std::optional<CycleResult> reproject_cycle(double u, double v, double d, const View& ref,
                                           const View& src, Sampling sampling = Sampling::Bilinear);

/// Depth of the source map at a continuous pixel, or empty when unavailable.
std::optional<double> sample_depth(const DepthMap& depth, double u, double v, Sampling sampling);

struct ConsistencyResult {
  Mask mask;
  Grid<int> votes;    // agreeing sources per pixel
  Grid<int> abstain;  // sources that returned a miss
  std::size_t passed_near = 0, passed_mid = 0, passed_far = 0;
};

/// Per-pixel vote over source views with thresholds chosen by the pixel's
/// depth region.
ConsistencyResult consistency_mask(const View& ref, const std::vector<const View*>& srcs,
                                   const quantile::DepthSegmentation& seg,
                                   const RegionThresholds& thr,
                                   Sampling sampling = Sampling::Bilinear);

/// Up to k views nearest to ref by optical-centre distance whose viewing
/// directions are within max_angle of ref's. Ties resolve by id.
std::vector<const View*> select_sources(const std::vector<View>& views, const View& ref,
                                        int k = 4, double max_angle_rad = 1.0471975511965976);

}  // namespace mvg::consistency
