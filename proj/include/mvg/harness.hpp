#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mvg/core.hpp"
#include "mvg/quantile.hpp"
#include "mvg/refine.hpp"
#include "mvg/triangle_mesh.hpp"

namespace mvg::harness {

enum class Shape { Plane, Sphere };

/// Analytic surface: a plane through `point` with unit `normal`, or a sphere.
struct Surface {
  Shape shape = Shape::Sphere;
  Vec3 point = Vec3(0, 0, 5);  // plane point or sphere centre
  Vec3 normal = Vec3(0, 0, -1);
  double radius = 1.0;

  static Surface plane(const Vec3& point, const Vec3& normal);
  static Surface sphere(const Vec3& centre, double radius);

  /// Signed distance, positive on the side the normal points to (outside).
  double sdf(const Vec3& p) const;
  Vec3 normal_at(const Vec3& p) const;
  /// Smallest t > 0 with origin + t * dir on the surface.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
};

enum class RigLayout {
  Cap,       // view 0 on the axis, the rest on a cone around it
  Surround,  // six views along the coordinate axes
};

struct RigSpec {
  int views = 6;
  int width = 256;
  int height = 256;
  double fov = 0.5235987755982988;  // rad, horizontal and vertical
  double orbit_radius = 5.0;        // m from the target
  Vec3 target = Vec3(0, 0, 5);
  Vec3 axis = Vec3(0, 0, -1);  // direction from target to view 0
  double cone_angle = 0.4363323129985824;  // rad, Cap layout
  RigLayout layout = RigLayout::Cap;
};

enum class NoiseKind { Gaussian, Uniform };

struct SceneSpec {
  Surface surface;
  RigSpec rig;
  double noise = 0.0;  // multiplicative depth noise: std (Gaussian) or half-width (Uniform)
  NoiseKind noise_kind = NoiseKind::Gaussian;
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<View> views;
  std::vector<DepthMap> gt_depth;
  std::vector<NormalMap> gt_normals;  // camera frame, facing the camera
};

std::vector<CameraPose> make_rig(const RigSpec& rig);

/// Ray-cast depth, normals and a Lambertian image for every rig view.
/// Throws ConfigError for a camera inside the sphere or a view that misses
/// the surface entirely.
SyntheticScene make_scene(const SceneSpec& spec);

/// Rendered colour of a surface point under the fixed light.
Vec3 shade(const Surface& s, const Vec3& p, const Vec3& normal);

/// Multiplies every valid depth by (1 + noise sample); deterministic per seed.
void add_depth_noise(DepthMap& d, double sigma, NoiseKind kind, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

struct AngularStats {
  double mean_deg = 0.0;
  double median_deg = 0.0;
  std::size_t count = 0;
};

/// Per-pixel angle between unit normals valid in both maps. `region`, when
/// given, further restricts the pixels.
AngularStats angular_error(const NormalMap& est, const NormalMap& gt, const Mask* region = nullptr);

/// Root mean square of (a - b) over pixels valid in both and in `region`.
double depth_rms(const DepthMap& a, const DepthMap& b, const Mask* region = nullptr);

/// Mask of pixels at least `margin` px from the image border.
Mask interior_mask(int width, int height, int margin);

/// Exact distance from p to triangle (a, b, c).
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Exact point-to-mesh distance queries.
class MeshDistance {
 public:
  explicit MeshDistance(const TriangleMesh& mesh);
  double operator()(const Vec3& p) const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Area-uniform samples on the mesh surface.
std::vector<Vec3> sample_mesh(const TriangleMesh& mesh, std::size_t samples, std::uint64_t seed);

/// Uniform samples on the analytic surface. Planes are sampled over the
/// projection of `extent`'s bounding box onto the plane.
std::vector<Vec3> sample_surface(const Surface& s, std::size_t samples, std::uint64_t seed,
                                 const TriangleMesh* extent = nullptr);

/// Symmetric chamfer: mean |sdf| of mesh samples and mean point-to-mesh
/// distance of surface samples, averaged.
double chamfer_distance(const TriangleMesh& mesh, const Surface& s, std::size_t samples = 20000,
                        std::uint64_t seed = 1);

struct ChamferParts {
  double mesh_to_surface = 0.0;
  double surface_to_mesh = 0.0;
};
ChamferParts chamfer_parts(const TriangleMesh& mesh, const Surface& s, std::size_t samples,
                           std::uint64_t seed);

/// RMS distance of mesh vertices to a plane surface.
double planarity_rms(const TriangleMesh& mesh, const Surface& plane);

// ---------------------------------------------------------------------------
// Oracles: direct loop implementations kept independent of the optimised code.

namespace oracle {

DepthMap bilateral_direct(const DepthMap& d, const ImageBuffer& guide, double sigma_spatial,
                          double sigma_range);

/// Weighted mean of the neighbours' depths after intersecting the centre ray
/// with the plane through each neighbour point normal to the centre normal.
DepthMap refine_direct(const DepthMap& d, const NormalMap& normals, const ImageBuffer& image,
                       const CameraIntrinsics& k, double alpha);

/// Scharr, non-maximum suppression and the edge-weighted log residual, all in
/// one unfused pass.
double edge_aware_direct(const DepthMap& d, const DepthMap& d_avg, const ImageBuffer& image);

/// Exact Gaussian KDE evaluated at each x.
std::vector<double> kde_direct(std::span<const double> samples, double bandwidth,
                               std::span<const double> xs);

/// Linear binning onto the curve's grid followed by direct summation of the
/// sampled kernel; the exact target of an FFT convolution on that grid.
std::vector<double> kde_binned_direct(std::span<const double> samples, double bandwidth,
                                      const quantile::Curve& grid);

/// Values divided by their trapezoid integral over a grid of spacing `step`.
std::vector<double> normalise_trapezoid(std::vector<double> values, double step);

/// Running trapezoid sum divided by its last value.
std::vector<double> cdf_cumsum(const quantile::Curve& density);

/// Sample p-quantile: the ceil(p n)-th smallest value.
double empirical_quantile(std::vector<double> samples, double p);

/// Mean distance to the k nearest other points by exhaustive search.
std::vector<double> knn_mean_bruteforce(std::span<const Vec3> points, int k);

/// exp([theta * axis]_x) by the Rodrigues formula.
Mat3 rodrigues(const Vec3& axis, double theta);

/// Rotation taking r onto n built from axis r x n and angle atan2(|r x n|, r . n).
Mat3 rotation_between(const Vec3& r, const Vec3& n);

/// Reference world visibility: true when the surface point is hit first by
/// the camera ray through it and projects inside the image.
bool visible(const Surface& s, const View& v, const Vec3& p, double tol = 1e-7);

/// Visible, and every pixel within `margin` of its projection sees the
/// surface, so the point is resolved by the pixel grid rather than straddling
/// a silhouette.
bool observed(const Surface& s, const View& v, const Vec3& p, int margin = 1);

}  // namespace oracle

}  // namespace mvg::harness
