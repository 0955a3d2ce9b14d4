#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "mvg/core.hpp"
#include "mvg/harness.hpp"

namespace mvg::test {

inline constexpr double kPi = std::numbers::pi;

inline double deg(double d) { return d * kPi / 180.0; }

inline DepthMap random_depth(int w, int h, std::mt19937_64& rng, double lo = 1.0, double hi = 3.0,
                             double invalid_fraction = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi), p(0.0, 1.0);
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (p(rng) >= invalid_fraction) d.set(x, y, u(rng));
  return d;
}

inline ImageBuffer random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.set(x, y, Vec3(u(rng), u(rng), u(rng)));
  return img;
}

inline ImageBuffer uniform_image(int w, int h, double v = 0.5) {
  ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.set(x, y, Vec3::Constant(v));
  return img;
}

inline NormalMap random_normals(int w, int h, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  NormalMap nm(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Vec3 n(0.3 * g(rng), 0.3 * g(rng), -1.0);
      nm.set(x, y, n.normalized());
    }
  return nm;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v;
  do v = Vec3(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-6);
  return v.normalized();
}

inline CameraPose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CameraPose p;
  p.rotation = Eigen::AngleAxisd(kPi * u(rng), random_unit(rng)).toRotationMatrix();
  p.translation = Vec3(u(rng), u(rng), u(rng));
  return p;
}

/// Single camera looking down +z at the origin frame; plane scenes built on it.
inline harness::SceneSpec single_view_spec(const harness::Surface& s, int size = 64) {
  harness::SceneSpec spec;
  spec.surface = s;
  spec.rig.views = 1;
  spec.rig.width = spec.rig.height = size;
  return spec;
}

/// Plane through (0, 0, 5) tilted by `tilt` about the x axis, facing the camera.
inline harness::Surface tilted_plane(double tilt) {
  return harness::Surface::plane(Vec3(0, 0, 5), Vec3(0, std::sin(tilt), -std::cos(tilt)));
}

}  // namespace mvg::test
