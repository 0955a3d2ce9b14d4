#include "mvg/refine.hpp"

#include <cmath>

#include "mvg/parallel.hpp"

namespace mvg::refine {

void RefineConfig::validate() const {
  if (pad_n < 1) throw ConfigError("refine: pad_n must be >= 1");
  if (!(sigma_spatial > 0.0) || !(sigma_range > 0.0) || !(alpha > 0.0))
    throw ConfigError("refine: sigma_spatial, sigma_range and alpha must be positive");
}

CameraIntrinsics padded_frame(const CameraIntrinsics& k, int n, const RefineConfig& cfg) {
  if (cfg.literal_padded_focal) return pad_intrinsics(k, n);
  CameraIntrinsics p = k;
  p.cx += n;
  p.cy += n;
  p.width += 2 * n;
  p.height += 2 * n;
  return p;
}

template <typename T>
Grid<T> mirror_pad(const Grid<T>& in, int n) {
  if (n < 0) throw DomainError("mirror_pad: negative padding");
  // A unit-length axis has nothing to reflect and is replicated instead.
  auto too_large = [n](int size) { return size > 1 && n >= size; };
  if (too_large(in.width) || too_large(in.height) || in.width < 1 || in.height < 1)
    throw DomainError("mirror_pad: padding must be smaller than the image");
  Grid<T> out(in.width + 2 * n, in.height + 2 * n);
  for (int y = 0; y < out.height; ++y) {
    const int sy = reflect101(y - n, in.height);
    for (int x = 0; x < out.width; ++x) out(x, y) = in(reflect101(x - n, in.width), sy);
  }
  return out;
}

template <typename T>
Grid<T> crop(const Grid<T>& in, int n) {
  Grid<T> out(in.width - 2 * n, in.height - 2 * n);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out(x, y) = in(x + n, y + n);
  return out;
}

template Grid<double> mirror_pad(const Grid<double>&, int);
template Grid<Vec3> mirror_pad(const Grid<Vec3>&, int);
template Grid<std::uint8_t> mirror_pad(const Grid<std::uint8_t>&, int);
template Grid<double> crop(const Grid<double>&, int);
template Grid<Vec3> crop(const Grid<Vec3>&, int);
template Grid<std::uint8_t> crop(const Grid<std::uint8_t>&, int);

DepthMap mirror_pad(const DepthMap& d, int n) {
  DepthMap out;
  out.values = mirror_pad(d.values, n);
  out.valid = mirror_pad(d.valid, n);
  return out;
}

NormalMap mirror_pad(const NormalMap& nm, int n) {
  NormalMap out;
  out.values = mirror_pad(nm.values, n);
  out.valid = mirror_pad(nm.valid, n);
  return out;
}

ImageBuffer mirror_pad(const ImageBuffer& img, int n) {
  ImageBuffer out;
  out.rgb = mirror_pad(img.rgb, n);
  return out;
}

// ---------------------------------------------------------------------------

DepthMap joint_bilateral_filter(const DepthMap& d, const ImageBuffer& guide, const RefineConfig& cfg) {
  cfg.validate();
  if (d.width() != guide.width() || d.height() != guide.height())
    throw DomainError("joint_bilateral_filter: depth and guide sizes differ");
  const DepthMap pd = mirror_pad(d, 1);
  const Grid<double> pl = mirror_pad(guide.luminance(), 1);

  double spatial[3][3];
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      spatial[dy + 1][dx + 1] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.sigma_spatial * cfg.sigma_spatial));
  const double range_scale = 1.0 / (2.0 * cfg.sigma_range * cfg.sigma_range);

  DepthMap out = d;
  parallel_for(static_cast<std::size_t>(d.height()), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < d.width(); ++x) {
      if (!d.is_valid(x, y)) continue;
      const double center = pl(x + 1, y + 1);
      double num = 0.0, den = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int px = x + 1 + dx, py = y + 1 + dy;
          if (!pd.is_valid(px, py)) continue;
          const double diff = pl(px, py) - center;
          const double w = spatial[dy + 1][dx + 1] * std::exp(-diff * diff * range_scale);
          num += w * pd(px, py);
          den += w;
        }
      out.values(x, y) = num / den;
    }
  });
  return out;
}

NormalMap estimate_normals(const DepthMap& d, const CameraIntrinsics& k, const RefineConfig& cfg) {
  cfg.validate();
  const int n = cfg.pad_n;
  const DepthMap pd = mirror_pad(d, n);
  const CameraIntrinsics kp = padded_frame(k, n, cfg);

  Grid<Vec3> points(pd.width(), pd.height(), Vec3::Zero());
  for (int y = 0; y < pd.height(); ++y)
    for (int x = 0; x < pd.width(); ++x)
      if (pd.is_valid(x, y)) points(x, y) = unproject_camera(x, y, pd(x, y), kp);

  NormalMap out(d.width(), d.height());
  parallel_for(static_cast<std::size_t>(d.height()), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < d.width(); ++x) {
      if (!d.is_valid(x, y)) continue;
      const int px = x + n, py = y + n;
      const Vec3& pi = points(px, py);
      Vec3 sum = Vec3::Zero();
      for (int j = 0; j < 8; ++j) {
        const auto& a = kRing[j];
        const auto& b = kRing[(j + 1) % 8];
        if (!pd.is_valid(px + a[0], py + a[1]) || !pd.is_valid(px + b[0], py + b[1])) continue;
        sum += (points(px + a[0], py + a[1]) - pi).cross(points(px + b[0], py + b[1]) - pi);
      }
      const double len = sum.norm();
      if (!(len > 1e-15 * pi.squaredNorm())) continue;
      Vec3 normal = sum / len;
      if (normal.dot(pi) > 0.0) normal = -normal;
      out.set(x, y, normal);
    }
  });
  return out;
}

AdjustmentFactors depth_adjustment_factors(const Vec3& center_normal,
                                           const CameraIntrinsics& k_padded, double u0, double v0) {
  auto factor = [&](double u, double v) {
    return (u - k_padded.cx) / k_padded.fx * center_normal.x() +
           (v - k_padded.cy) / k_padded.fy * center_normal.y() + center_normal.z();
  };
  AdjustmentFactors f;
  f.eta = factor(u0, v0);
  for (int j = 0; j < 8; ++j) f.gamma[j] = factor(u0 + kRing[j][0], v0 + kRing[j][1]);
  return f;
}

DepthMap refine_depth(const DepthMap& d, const NormalMap& normals, const ImageBuffer& image,
                      const CameraIntrinsics& k, const RefineConfig& cfg,
                      RefineDiagnostics* diagnostics) {
  cfg.validate();
  if (normals.width() != d.width() || normals.height() != d.height() ||
      image.width() != d.width() || image.height() != d.height())
    throw DomainError("refine_depth: inputs differ in size");
  const int n = cfg.pad_n;
  const DepthMap pd = mirror_pad(d, n);
  const Grid<double> pl = mirror_pad(image.luminance(), n);
  const CameraIntrinsics kp = padded_frame(k, n, cfg);

  DepthMap out = d;
  std::vector<std::size_t> fallbacks(static_cast<std::size_t>(d.height()), 0);
  parallel_for(static_cast<std::size_t>(d.height()), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < d.width(); ++x) {
      if (!d.is_valid(x, y)) continue;
      if (!normals.is_valid(x, y)) {
        ++fallbacks[row];
        continue;
      }
      const int px = x + n, py = y + n;
      const AdjustmentFactors f = depth_adjustment_factors(normals(x, y), kp, px, py);
      if (std::abs(f.eta) < 1e-8) {
        ++fallbacks[row];
        continue;
      }
      const double center_luma = pl(px, py);
      double num = 0.0, den = 0.0;
      int used = 0;
      for (int j = 0; j < 8; ++j) {
        const int qx = px + kRing[j][0], qy = py + kRing[j][1];
        if (!pd.is_valid(qx, qy) || std::abs(f.gamma[j]) < 1e-8) continue;
        // Neighbour depth moved onto the centre's tangent plane.
        const double transferred = f.gamma[j] / f.eta * pd(qx, qy);
        const double w = std::exp(-cfg.alpha * std::abs(center_luma - pl(qx, qy)));
        num += w * transferred;
        den += w;
        ++used;
      }
      const double refined = cfg.literal_eighth ? num / 8.0 : num / den;
      if (used == 0 || !(refined > 0.0) || !std::isfinite(refined)) {
        ++fallbacks[row];
        continue;
      }
      out.values(x, y) = refined;
    }
  });
  if (diagnostics) {
    diagnostics->fallback_pixels = 0;
    for (auto c : fallbacks) diagnostics->fallback_pixels += c;
  }
  return out;
}

// ---------------------------------------------------------------------------

Grid<double> scharr_edges_nms(const ImageBuffer& image) {
  const Grid<double> lum = image.luminance();
  const int w = lum.width, h = lum.height;
  auto at = [&](int x, int y) { return lum(reflect101(x, w), reflect101(y, h)); };

  Grid<double> gx(w, h, 0.0), gy(w, h, 0.0), mag(w, h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      gx(x, y) = (3.0 * (at(x + 1, y - 1) - at(x - 1, y - 1)) + 10.0 * (at(x + 1, y) - at(x - 1, y)) +
                  3.0 * (at(x + 1, y + 1) - at(x - 1, y + 1))) / 32.0;
      gy(x, y) = (3.0 * (at(x - 1, y + 1) - at(x - 1, y - 1)) + 10.0 * (at(x, y + 1) - at(x, y - 1)) +
                  3.0 * (at(x + 1, y + 1) - at(x + 1, y - 1))) / 32.0;
      mag(x, y) = std::hypot(gx(x, y), gy(x, y));
    }

  Grid<double> out(w, h, 0.0);
  auto m = [&](int x, int y) { return mag(reflect101(x, w), reflect101(y, h)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = mag(x, y);
      if (v <= 0.0) continue;
      double angle = std::atan2(gy(x, y), gx(x, y)) * 180.0 / 3.14159265358979323846;
      if (angle < 0.0) angle += 180.0;
      int ox = 1, oy = 0;
      if (angle >= 22.5 && angle < 67.5) {
        ox = 1, oy = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        ox = 0, oy = 1;
      } else if (angle >= 112.5 && angle < 157.5) {
        ox = -1, oy = 1;
      }
      if (v >= m(x + ox, y + oy) && v >= m(x - ox, y - oy)) out(x, y) = v;
    }
  return out;
}

double edge_aware_discrepancy(const DepthMap& d, const DepthMap& d_avg, const ImageBuffer& image) {
  if (d.width() != d_avg.width() || d.height() != d_avg.height() || d.width() != image.width() ||
      d.height() != image.height())
    throw DomainError("edge_aware_discrepancy: inputs differ in size");
  const Grid<double> edges = scharr_edges_nms(image);
  const int w = d.width(), h = d.height();
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!d.is_valid(x, y) || !d_avg.is_valid(x, y)) continue;
      const double e = edges(x, y);
      const double lx = std::exp(-std::abs(e - edges(reflect101(x + 1, w), y)));
      const double ly = std::exp(-std::abs(e - edges(x, reflect101(y + 1, h))));
      const double r = std::log1p(std::abs(d(x, y) - d_avg(x, y)));
      sum += (lx + ly) * r;
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace mvg::refine
