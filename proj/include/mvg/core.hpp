#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mvg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Error hierarchy. Everything thrown by the library derives from Error so
// callers (the CLI in particular) can map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class InvalidDepthError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Inconsistent or unusable configuration (thresholds, rigs, view counts).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input file. Carries the offending path.
class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class EmptyCloudError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Cameras

/// Pinhole intrinsics. Pixel (u, v) addresses column u, row v; the ray through
/// integer coordinates (cx, cy) is the optical axis.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  /// Throws ConfigError unless fx, fy > 0 and the principal point lies inside
  /// the image.
  void validate() const;

  double fovx() const;
  double fovy() const;

  bool operator==(const CameraIntrinsics&) const = default;
};

/// World-to-camera rigid transform: p_cam = rotation * p_world + translation.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate() const;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  Vec3 center() const { return -rotation.transpose() * translation; }
  /// Camera +z axis expressed in world coordinates.
  Vec3 viewing_direction() const { return rotation.row(2).transpose(); }

  CameraPose inverse() const;
  /// (this ∘ other): first apply `other`, then this.
  CameraPose compose(const CameraPose& other) const;

  static CameraPose look_at(const Vec3& eye, const Vec3& target,
                            const Vec3& down_hint = Vec3(0, 1, 0));
};

CameraIntrinsics intrinsics_from_fov(double fovx, double fovy, int width, int height);

/// Intrinsics for an image mirror-padded by n pixels on every side. The field
/// of view is preserved and the principal point shifts by n.
CameraIntrinsics pad_intrinsics(const CameraIntrinsics& k, int n);

/// Camera-frame point at z-depth d through pixel (u, v).
Vec3 unproject_camera(double u, double v, double d, const CameraIntrinsics& k);
Vec3 unproject(double u, double v, double d, const CameraIntrinsics& k, const CameraPose& pose);

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// Empty when the point lies on or behind the image plane (camera z <= 0).
/// Points in front of the camera but outside the image still return
/// coordinates; bounds checking is the caller's job.
std::optional<PixelDepth> project(const Vec3& world, const CameraIntrinsics& k,
                                  const CameraPose& pose);

// ---------------------------------------------------------------------------
// Dense maps

template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, const T& fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  T& operator()(int x, int y) { return data[index(x, y)]; }
  const T& operator()(int x, int y) const { return data[index(x, y)]; }

  bool operator==(const Grid&) const = default;
};

using Mask = Grid<std::uint8_t>;

/// Depth in meters (camera-frame z). Invalid pixels hold 0 and are cleared in
/// the mask; consumers must consult the mask.
struct DepthMap {
  Grid<double> values;
  Mask valid;

  DepthMap() = default;
  DepthMap(int w, int h) : values(w, h, 0.0), valid(w, h, 0) {}

  int width() const { return values.width; }
  int height() const { return values.height; }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }
  double operator()(int x, int y) const { return values(x, y); }
  void set(int x, int y, double d);
  void invalidate(int x, int y);
  std::size_t valid_count() const;

  /// Builds mask from values: finite and > 0 means valid.
  static DepthMap from_values(Grid<double> values);
};

/// Per-pixel unit vectors. Frame is documented at each producer.
struct NormalMap {
  Grid<Vec3> values;
  Mask valid;

  NormalMap() = default;
  NormalMap(int w, int h) : values(w, h, Vec3::Zero()), valid(w, h, 0) {}

  int width() const { return values.width; }
  int height() const { return values.height; }
  bool is_valid(int x, int y) const { return valid(x, y) != 0; }
  const Vec3& operator()(int x, int y) const { return values(x, y); }
  void set(int x, int y, const Vec3& n);
};

/// RGB image with channels in [0, 1].
struct ImageBuffer {
  Grid<Vec3> rgb;

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : rgb(w, h, Vec3::Zero()) {}

  int width() const { return rgb.width; }
  int height() const { return rgb.height; }
  const Vec3& operator()(int x, int y) const { return rgb(x, y); }
  void set(int x, int y, const Vec3& c);

  /// Rec. 601 luma.
  Grid<double> luminance() const;
};

inline double luma(const Vec3& c) { return 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z(); }

// ---------------------------------------------------------------------------
// Surfels

struct Surfel {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Quat rotation = Quat::Identity();  // stored w, x, y, z
  Vec2 scale = Vec2::Constant(1e-3);
  double opacity_logit = 0.0;
  Vec3 sh0 = Vec3::Zero();
};

using SurfelCloud = std::vector<Surfel>;

/// Checks unit quaternions, positive scales and rotation/normal agreement.
/// Returns the index of the first offending surfel, or nullopt.
std::optional<std::size_t> find_invalid_surfel(const SurfelCloud& cloud, double tol = 1e-6);

// ---------------------------------------------------------------------------

struct View {
  int id = 0;
  CameraIntrinsics intrinsics;
  CameraPose pose;
  ImageBuffer image;
  DepthMap depth;

  void validate() const;
};

double logit(double p);
double sigmoid(double x);

}  // namespace mvg
