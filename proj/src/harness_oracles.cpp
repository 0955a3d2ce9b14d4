// Reference implementations. Deliberately plain loops; none of this shares
// code with the paths it checks.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvg/harness.hpp"

namespace mvg::harness::oracle {

namespace {

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

DepthMap bilateral_direct(const DepthMap& d, const ImageBuffer& guide, double sigma_spatial,
                          double sigma_range) {
  const int w = d.width(), h = d.height();
  DepthMap out = d;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!d.is_valid(x, y)) continue;
      const Vec3& c = guide(x, y);
      const double lc = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
      double num = 0.0;
      double den = 0.0;
      for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
          const int xx = mirror(x + i, w);
          const int yy = mirror(y + j, h);
          if (!d.is_valid(xx, yy)) continue;
          const Vec3& q = guide(xx, yy);
          const double lq = 0.299 * q[0] + 0.587 * q[1] + 0.114 * q[2];
          const double gs = std::exp(-(i * i + j * j) / (2.0 * sigma_spatial * sigma_spatial));
          const double gr = std::exp(-(lq - lc) * (lq - lc) / (2.0 * sigma_range * sigma_range));
          num += gs * gr * d(xx, yy);
          den += gs * gr;
        }
      }
      out.values(x, y) = num / den;
    }
  }
  return out;
}

DepthMap refine_direct(const DepthMap& d, const NormalMap& normals, const ImageBuffer& image,
                       const CameraIntrinsics& k, double alpha) {
  const int w = d.width(), h = d.height();
  auto ray = [&](double u, double v) { return Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0); };
  auto luma = [&](int x, int y) {
    const Vec3& c = image(x, y);
    return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
  };
  DepthMap out = d;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!d.is_valid(x, y) || !normals.is_valid(x, y)) continue;
      const Vec3& n = normals(x, y);
      const double denom = n.dot(ray(x, y));
      if (std::abs(denom) < 1e-8) continue;
      double num = 0.0;
      double den = 0.0;
      for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
          if (i == 0 && j == 0) continue;
          // The padded neighbour sits at the unreflected pixel position.
          const Vec3 r = ray(x + i, y + j);
          if (std::abs(n.dot(r)) < 1e-8) continue;
          const int xx = mirror(x + i, w);
          const int yy = mirror(y + j, h);
          if (!d.is_valid(xx, yy)) continue;
          const Vec3 q = d(xx, yy) * r;
          const double weight = std::exp(-alpha * std::abs(luma(x, y) - luma(xx, yy)));
          num += weight * n.dot(q) / denom;
          den += weight;
        }
      }
      if (den > 0.0 && num / den > 0.0) out.values(x, y) = num / den;
    }
  }
  return out;
}

double edge_aware_direct(const DepthMap& d, const DepthMap& d_avg, const ImageBuffer& image) {
  const int w = d.width(), h = d.height();
  std::vector<double> lum(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec3& c = image(x, y);
      lum[static_cast<std::size_t>(y) * w + x] = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    }
  }
  auto L = [&](int x, int y) { return lum[static_cast<std::size_t>(mirror(y, h)) * w + mirror(x, w)]; };
  static constexpr double kx[3][3] = {{-3, 0, 3}, {-10, 0, 10}, {-3, 0, 3}};
  std::vector<double> gx(lum.size()), gy(lum.size()), mag(lum.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sx = 0.0;
      double sy = 0.0;
      for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < 3; ++i) {
          sx += kx[j][i] * L(x + i - 1, y + j - 1);
          sy += kx[i][j] * L(x + i - 1, y + j - 1);
        }
      }
      const std::size_t id = static_cast<std::size_t>(y) * w + x;
      gx[id] = sx / 32.0;
      gy[id] = sy / 32.0;
      mag[id] = std::sqrt(gx[id] * gx[id] + gy[id] * gy[id]);
    }
  }
  auto M = [&](int x, int y) { return mag[static_cast<std::size_t>(mirror(y, h)) * w + mirror(x, w)]; };
  std::vector<double> edge(lum.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t id = static_cast<std::size_t>(y) * w + x;
      if (mag[id] <= 0.0) continue;
      double deg = std::atan2(gy[id], gx[id]) * 180.0 / std::numbers::pi;
      if (deg < 0.0) deg += 180.0;
      // Quantise the gradient direction to 0, 45, 90 or 135 degrees.
      const int sector = static_cast<int>(std::floor((deg + 22.5) / 45.0)) % 4;
      static constexpr int step[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
      const int ox = step[sector][0], oy = step[sector][1];
      if (mag[id] >= M(x + ox, y + oy) && mag[id] >= M(x - ox, y - oy)) edge[id] = mag[id];
    }
  }
  auto E = [&](int x, int y) { return edge[static_cast<std::size_t>(mirror(y, h)) * w + mirror(x, w)]; };
  double total = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!d.is_valid(x, y) || !d_avg.is_valid(x, y)) continue;
      const double r = std::log(1.0 + std::abs(d(x, y) - d_avg(x, y)));
      total += std::exp(-std::abs(E(x, y) - E(x + 1, y))) * r;
      total += std::exp(-std::abs(E(x, y) - E(x, y + 1))) * r;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<double> kde_direct(std::span<const double> samples, double bandwidth,
                               std::span<const double> xs) {
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth *
                             std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out;
  for (double x : xs) {
    double sum = 0.0;
    for (double s : samples) {
      const double z = (x - s) / bandwidth;
      sum += std::exp(-0.5 * z * z);
    }
    out.push_back(sum * norm);
  }
  return out;
}

std::vector<double> kde_binned_direct(std::span<const double> samples, double bandwidth,
                                      const quantile::Curve& grid) {
  const std::size_t g = grid.values.size();
  std::vector<double> bins(g, 0.0);
  for (double s : samples) {
    const double t = (s - grid.origin) / grid.step;
    std::size_t j = t <= 0.0 ? 0 : static_cast<std::size_t>(t);
    if (j > g - 2) j = g - 2;
    double frac = t - static_cast<double>(j);
    frac = std::min(1.0, std::max(0.0, frac));
    bins[j] += 1.0 - frac;
    bins[j + 1] += frac;
  }
  const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth *
                             std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(g, 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < g; ++j) {
      const double z = (static_cast<double>(i) - static_cast<double>(j)) * grid.step / bandwidth;
      sum += bins[j] * std::exp(-0.5 * z * z);
    }
    out[i] = sum * norm;
  }
  return out;
}

std::vector<double> normalise_trapezoid(std::vector<double> values, double step) {
  double area = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) area += 0.5 * (values[i - 1] + values[i]) * step;
  for (double& v : values) v /= area;
  return values;
}

std::vector<double> cdf_cumsum(const quantile::Curve& density) {
  const auto& f = density.values;
  std::vector<double> out(f.size(), 0.0);
  for (std::size_t i = 1; i < f.size(); ++i) out[i] = out[i - 1] + 0.5 * (f[i] + f[i - 1]) * density.step;
  const double last = out.empty() ? 0.0 : out.back();
  for (double& v : out) v /= last;
  return out;
}

double empirical_quantile(std::vector<double> samples, double p) {
  std::sort(samples.begin(), samples.end());
  const double rank = std::ceil(p * static_cast<double>(samples.size()));
  const std::size_t i = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return samples[std::min(i, samples.size() - 1)];
}

std::vector<double> knn_mean_bruteforce(std::span<const Vec3> points, int k) {
  std::vector<double> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < points.size(); ++j)
      if (j != i) all.emplace_back((points[i] - points[j]).norm(), j);
    std::sort(all.begin(), all.end());
    double sum = 0.0;
    for (int m = 0; m < k; ++m) sum += all[m].first;
    out.push_back(sum / k);
  }
  return out;
}

Mat3 rodrigues(const Vec3& axis, double theta) {
  const Vec3 a = axis.normalized();
  Mat3 k;
  k << 0, -a.z(), a.y(),  //
      a.z(), 0, -a.x(),   //
      -a.y(), a.x(), 0;
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

Mat3 rotation_between(const Vec3& r, const Vec3& n) {
  const Vec3 c = r.cross(n);
  const double s = c.norm();
  const double d = r.dot(n);
  if (s < 1e-8) {
    if (d > 0.0) return Mat3::Identity();
    // Half turn about r crossed with its least-aligned coordinate axis.
    const Vec3 abs = r.cwiseAbs();
    Vec3 e = Vec3::UnitX();
    if (abs.y() < abs.x() && abs.y() <= abs.z()) e = Vec3::UnitY();
    if (abs.z() < abs.x() && abs.z() < abs.y()) e = Vec3::UnitZ();
    return rodrigues(r.cross(e), std::numbers::pi);
  }
  return rodrigues(c / s, std::atan2(s, d));
}

bool visible(const Surface& s, const View& v, const Vec3& p, double tol) {
  const Vec3 cam = v.pose.rotation * p + v.pose.translation;
  if (cam.z() <= 0.0) return false;
  const double u = v.intrinsics.fx * cam.x() / cam.z() + v.intrinsics.cx;
  const double w = v.intrinsics.fy * cam.y() / cam.z() + v.intrinsics.cy;
  if (u < -0.5 || w < -0.5 || u >= v.intrinsics.width - 0.5 || w >= v.intrinsics.height - 0.5)
    return false;
  const Vec3 eye = v.pose.center();
  const Vec3 dir = p - eye;
  const auto t = s.intersect(eye, dir);
  return t && std::abs(*t - 1.0) < tol;
}

bool observed(const Surface& s, const View& v, const Vec3& p, int margin) {
  if (!visible(s, v, p, 1e-6)) return false;
  const Vec3 cam = v.pose.rotation * p + v.pose.translation;
  const long cu = std::lround(v.intrinsics.fx * cam.x() / cam.z() + v.intrinsics.cx);
  const long cv = std::lround(v.intrinsics.fy * cam.y() / cam.z() + v.intrinsics.cy);
  const Mat3 rt = v.pose.rotation.transpose();
  const Vec3 eye = v.pose.center();
  for (long y = cv - margin; y <= cv + margin; ++y) {
    for (long x = cu - margin; x <= cu + margin; ++x) {
      if (x < 0 || y < 0 || x >= v.intrinsics.width || y >= v.intrinsics.height) return false;
      const Vec3 ray((x - v.intrinsics.cx) / v.intrinsics.fx, (y - v.intrinsics.cy) / v.intrinsics.fy, 1.0);
      if (!s.intersect(eye, rt * ray)) return false;
    }
  }
  return true;
}

}  // namespace mvg::harness::oracle
