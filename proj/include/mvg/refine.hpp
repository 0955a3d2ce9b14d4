#pragma once

#include <array>
#include <cstddef>

#include "mvg/core.hpp"

namespace mvg::refine {

struct RefineConfig {
  int pad_n = 1;               // mirror padding width, px
  double sigma_spatial = 1.0;  // px
  double sigma_range = 0.1;    // luminance units
  double alpha = 10.0;         // gradient weight decay
  /// Divide the weighted neighbour sum by 8 instead of by the weight sum.
  bool literal_eighth = false;
  /// Backproject padded pixels with pad_intrinsics (field of view kept, focal
  /// length grown) instead of the same camera with a shifted principal point.
  bool literal_padded_focal = false;

  void validate() const;
};

/// Intrinsics of the padded pixel grid used by the dense operators.
CameraIntrinsics padded_frame(const CameraIntrinsics& k, int n, const RefineConfig& cfg);

/// Reflect-101 padding: the edge pixel is not repeated ([a,b,c] -> [b,a,b,c,b]).
template <typename T>
Grid<T> mirror_pad(const Grid<T>& in, int n);

DepthMap mirror_pad(const DepthMap& d, int n);
NormalMap mirror_pad(const NormalMap& nm, int n);
ImageBuffer mirror_pad(const ImageBuffer& img, int n);

template <typename T>
Grid<T> crop(const Grid<T>& in, int n);

/// Reflect-101 index into [0, size).
inline int reflect101(int i, int size) {
  if (size == 1) return 0;
  while (i < 0 || i >= size) {
    if (i < 0) i = -i;
    if (i >= size) i = 2 * size - 2 - i;
  }
  return i;
}

/// Offsets of the 8-neighbourhood in counterclockwise order as seen on the
/// image (x right, y down), starting east.
inline constexpr std::array<std::array<int, 2>, 8> kRing = {{
    {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}}};

/// 3x3 joint bilateral filter of depth guided by image luminance. Invalid
/// pixels neither contribute nor change; the output mask equals the input.
DepthMap joint_bilateral_filter(const DepthMap& d, const ImageBuffer& guide, const RefineConfig& cfg);

/// Camera-frame unit normals from 8-neighbour cross products on the mirror
/// padded, backprojected depth. Normals face the camera.
NormalMap estimate_normals(const DepthMap& d, const CameraIntrinsics& k, const RefineConfig& cfg);

struct AdjustmentFactors {
  double eta = 0.0;
  std::array<double, 8> gamma{};  // ordered as kRing
};

/// Plane-ratio factors from the centre normal: on that tangent plane,
/// eta / gamma_j = depth(neighbour j) / depth(centre).
/// (u0, v0) and `k_padded` share one pixel frame.
AdjustmentFactors depth_adjustment_factors(const Vec3& center_normal,
                                           const CameraIntrinsics& k_padded, double u0, double v0);

struct RefineDiagnostics {
  std::size_t fallback_pixels = 0;  // every neighbour excluded; input depth kept
};

/// Normal- and gradient-guided weighted average of the 8 plane-transferred
/// neighbour depths. `normals` must be camera frame and co-registered.
DepthMap refine_depth(const DepthMap& d, const NormalMap& normals, const ImageBuffer& image,
                      const CameraIntrinsics& k, const RefineConfig& cfg,
                      RefineDiagnostics* diagnostics = nullptr);

/// Scharr gradient magnitude of luminance followed by 4-direction
/// non-maximum suppression.
Grid<double> scharr_edges_nms(const ImageBuffer& image);

/// Mean edge-weighted log discrepancy between a depth map and its refined
/// version, over pixels valid in both.
double edge_aware_discrepancy(const DepthMap& d, const DepthMap& d_avg, const ImageBuffer& image);

}  // namespace mvg::refine
