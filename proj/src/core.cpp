#include "mvg/core.hpp"

#include <cmath>
#include <numbers>

namespace mvg {

void CameraIntrinsics::validate() const {
  if (width < 1 || height < 1) throw ConfigError("intrinsics: image size must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
    throw ConfigError("intrinsics: principal point outside image");
}

double CameraIntrinsics::fovx() const { return 2.0 * std::atan(width / (2.0 * fx)); }
double CameraIntrinsics::fovy() const { return 2.0 * std::atan(height / (2.0 * fy)); }

void CameraPose::validate() const {
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  if (!(err <= 1e-9) || !(std::abs(rotation.determinant() - 1.0) <= 1e-9))
    throw ConfigError("pose: rotation is not orthonormal with determinant +1");
  if (!translation.allFinite()) throw ConfigError("pose: translation not finite");
}

CameraPose CameraPose::inverse() const {
  CameraPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -inv.rotation * translation;
  return inv;
}

CameraPose CameraPose::compose(const CameraPose& other) const {
  CameraPose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

CameraPose CameraPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& down_hint) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = down_hint.cross(z);
  if (x.norm() < 1e-9) x = Vec3(0, 0, 1).cross(z);
  x.normalize();
  const Vec3 y = z.cross(x);
  CameraPose pose;
  pose.rotation.row(0) = x.transpose();
  pose.rotation.row(1) = y.transpose();
  pose.rotation.row(2) = z.transpose();
  pose.translation = -pose.rotation * eye;
  return pose;
}

CameraIntrinsics intrinsics_from_fov(double fovx, double fovy, int width, int height) {
  const double pi = std::numbers::pi;
  if (!(fovx > 0.0 && fovx < pi) || !(fovy > 0.0 && fovy < pi))
    throw DomainError("intrinsics_from_fov: field of view must lie in (0, pi)");
  if (width < 1 || height < 1) throw DomainError("intrinsics_from_fov: image size must be >= 1");
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = width / (2.0 * std::tan(fovx / 2.0));
  k.fy = height / (2.0 * std::tan(fovy / 2.0));
  k.cx = width / 2.0;
  k.cy = height / 2.0;
  return k;
}

CameraIntrinsics pad_intrinsics(const CameraIntrinsics& k, int n) {
  if (n < 0) throw DomainError("pad_intrinsics: padding must be non-negative");
  if (n == 0) return k;
  CameraIntrinsics p = k;
  p.width = k.width + 2 * n;
  p.height = k.height + 2 * n;
  // f' = (W + 2n) / (2 tan(fov / 2)) with tan(fov / 2) = W / (2 f).
  p.fx = k.fx * p.width / k.width;
  p.fy = k.fy * p.height / k.height;
  p.cx = k.cx + n;
  p.cy = k.cy + n;
  return p;
}

Vec3 unproject_camera(double u, double v, double d, const CameraIntrinsics& k) {
  if (!(d > 0.0)) throw InvalidDepthError("unproject: depth must be positive");
  return Vec3(d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d);
}

Vec3 unproject(double u, double v, double d, const CameraIntrinsics& k, const CameraPose& pose) {
  return pose.to_world(unproject_camera(u, v, d, k));
}

std::optional<PixelDepth> project(const Vec3& world, const CameraIntrinsics& k,
                                  const CameraPose& pose) {
  const Vec3 p = pose.to_camera(world);
  if (!(p.z() > 0.0)) return std::nullopt;
  return PixelDepth{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.z()};
}

// ---------------------------------------------------------------------------

void DepthMap::set(int x, int y, double d) {
  if (std::isfinite(d) && d > 0.0) {
    values(x, y) = d;
    valid(x, y) = 1;
  } else {
    invalidate(x, y);
  }
}

void DepthMap::invalidate(int x, int y) {
  values(x, y) = 0.0;
  valid(x, y) = 0;
}

std::size_t DepthMap::valid_count() const {
  std::size_t n = 0;
  for (auto m : valid.data) n += m != 0;
  return n;
}

DepthMap DepthMap::from_values(Grid<double> v) {
  DepthMap d;
  d.valid = Mask(v.width, v.height, 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isfinite(v.data[i]) && v.data[i] > 0.0) {
      d.valid.data[i] = 1;
    } else {
      v.data[i] = 0.0;
    }
  }
  d.values = std::move(v);
  return d;
}

void NormalMap::set(int x, int y, const Vec3& n) {
  values(x, y) = n;
  valid(x, y) = 1;
}

void ImageBuffer::set(int x, int y, const Vec3& c) {
  rgb(x, y) = c.cwiseMax(0.0).cwiseMin(1.0);
}

Grid<double> ImageBuffer::luminance() const {
  Grid<double> out(width(), height(), 0.0);
  for (std::size_t i = 0; i < rgb.size(); ++i) out.data[i] = luma(rgb.data[i]);
  return out;
}

std::optional<std::size_t> find_invalid_surfel(const SurfelCloud& cloud, double tol) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Surfel& s = cloud[i];
    if (std::abs(s.rotation.norm() - 1.0) > tol) return i;
    if (!(s.scale.x() > 0.0) || !(s.scale.y() > 0.0)) return i;
    if ((s.rotation * Vec3::UnitZ() - s.normal).norm() > tol) return i;
  }
  return std::nullopt;
}

void View::validate() const {
  intrinsics.validate();
  pose.validate();
  if (image.width() != intrinsics.width || image.height() != intrinsics.height)
    throw ConfigError("view " + std::to_string(id) + ": image size does not match intrinsics");
  if (depth.width() != intrinsics.width || depth.height() != intrinsics.height)
    throw ConfigError("view " + std::to_string(id) + ": depth size does not match intrinsics");
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("logit: probability must lie in (0, 1)");
  return std::log(p / (1.0 - p));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace mvg
