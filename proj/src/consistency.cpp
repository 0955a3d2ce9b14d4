#include "mvg/consistency.hpp"

#include <algorithm>
#include <cmath>

#include "mvg/parallel.hpp"

namespace mvg::consistency {

void Thresholds::validate() const {
  if (!(pixel_tol > 0.0) || !(rel_depth_tol > 0.0) || min_views < 1)
    throw ConfigError("consistency: thresholds need pixel_tol > 0, rel_depth_tol > 0, min_views >= 1");
}

void RegionThresholds::validate() const {
  near.validate();
  mid.validate();
  far.validate();
}

std::optional<double> sample_depth(const DepthMap& depth, double u, double v, Sampling sampling) {
  if (!std::isfinite(u) || !std::isfinite(v)) return std::nullopt;
  if (sampling == Sampling::Nearest) {
    const double ru = std::round(u), rv = std::round(v);
    if (ru < 0.0 || rv < 0.0 || ru >= depth.width() || rv >= depth.height()) return std::nullopt;
    const int x = static_cast<int>(ru), y = static_cast<int>(rv);
    if (!depth.is_valid(x, y)) return std::nullopt;
    return depth(x, y);
  }
  const double fu = std::floor(u), fv = std::floor(v);
  // Incomplete 2x2 support (image edge, silhouette) degrades to nearest.
  if (fu < 0.0 || fv < 0.0 || fu + 1.0 >= depth.width() || fv + 1.0 >= depth.height())
    return sample_depth(depth, u, v, Sampling::Nearest);
  const int x = static_cast<int>(fu), y = static_cast<int>(fv);
  if (!depth.is_valid(x, y) || !depth.is_valid(x + 1, y) || !depth.is_valid(x, y + 1) ||
      !depth.is_valid(x + 1, y + 1))
    return sample_depth(depth, u, v, Sampling::Nearest);
  const double a = u - fu, b = v - fv;
  return (1 - a) * (1 - b) * depth(x, y) + a * (1 - b) * depth(x + 1, y) +
         (1 - a) * b * depth(x, y + 1) + a * b * depth(x + 1, y + 1);
}

std::optional<CycleResult> reproject_cycle(double u, double v, double d, const View& ref,
                                           const View& src, Sampling sampling) {
  if (!(d > 0.0)) throw InvalidDepthError("reproject_cycle: depth must be positive");
  if (&ref == &src || (src.id == ref.id && src.pose.rotation == ref.pose.rotation &&
                       src.pose.translation == ref.pose.translation &&
                       src.intrinsics == ref.intrinsics))
    return CycleResult{u, v, d};

  const Vec3 world = unproject(u, v, d, ref.intrinsics, ref.pose);
  const auto in_src = project(world, src.intrinsics, src.pose);
  if (!in_src) return std::nullopt;
  const auto src_depth = sample_depth(src.depth, in_src->u, in_src->v, sampling);
  if (!src_depth) return std::nullopt;

  // Nearest sampling re-anchors the ray at the sampled pixel centre.
  double su = in_src->u, sv = in_src->v;
  if (sampling == Sampling::Nearest) {
    su = std::round(su);
    sv = std::round(sv);
  }
  const Vec3 back = unproject(su, sv, *src_depth, src.intrinsics, src.pose);
  const auto in_ref = project(back, ref.intrinsics, ref.pose);
  if (!in_ref) return std::nullopt;
  return CycleResult{in_ref->u, in_ref->v, in_ref->depth};
}

ConsistencyResult consistency_mask(const View& ref, const std::vector<const View*>& srcs,
                                   const quantile::DepthSegmentation& seg,
                                   const RegionThresholds& thr, Sampling sampling) {
  thr.validate();
  const int needed = std::max({thr.near.min_views, thr.mid.min_views, thr.far.min_views});
  if (static_cast<int>(srcs.size()) < needed)
    throw ConfigError("consistency: " + std::to_string(srcs.size()) + " source views, need " +
                      std::to_string(needed));
  const int w = ref.depth.width(), h = ref.depth.height();
  if (seg.near_mask.width != w || seg.near_mask.height != h)
    throw DomainError("consistency: segmentation and depth sizes differ");

  ConsistencyResult out;
  out.mask = Mask(w, h, 0);
  out.votes = Grid<int>(w, h, 0);
  out.abstain = Grid<int>(w, h, 0);
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < w; ++x) {
      if (!ref.depth.is_valid(x, y)) continue;
      const Thresholds* t = seg.near_mask(x, y)  ? &thr.near
                            : seg.far_mask(x, y) ? &thr.far
                            : seg.mid_mask(x, y) ? &thr.mid
                                                 : nullptr;
      if (!t) continue;
      const double d = ref.depth(x, y);
      int votes = 0, abstain = 0;
      for (const View* src : srcs) {
        const auto c = reproject_cycle(x, y, d, ref, *src, sampling);
        if (!c) {
          ++abstain;
          continue;
        }
        if (std::hypot(c->u - x, c->v - y) < t->pixel_tol &&
            std::abs(c->depth - d) / d < t->rel_depth_tol)
          ++votes;
      }
      out.votes(x, y) = votes;
      out.abstain(x, y) = abstain;
      out.mask(x, y) = votes >= t->min_views ? 1 : 0;
    }
  });
  for (std::size_t i = 0; i < out.mask.size(); ++i) {
    if (!out.mask.data[i]) continue;
    if (seg.near_mask.data[i]) {
      ++out.passed_near;
    } else if (seg.far_mask.data[i]) {
      ++out.passed_far;
    } else {
      ++out.passed_mid;
    }
  }
  return out;
}

std::vector<const View*> select_sources(const std::vector<View>& views, const View& ref, int k,
                                        double max_angle_rad) {
  const Vec3 c = ref.pose.center();
  const Vec3 dir = ref.pose.viewing_direction();
  const double min_cos = std::cos(max_angle_rad);
  std::vector<std::pair<double, const View*>> candidates;
  for (const View& v : views) {
    if (v.id == ref.id) continue;
    if (v.pose.viewing_direction().dot(dir) <= min_cos) continue;
    candidates.emplace_back((v.pose.center() - c).norm(), &v);
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
  });
  std::vector<const View*> out;
  for (std::size_t i = 0; i < candidates.size() && static_cast<int>(i) < k; ++i)
    out.push_back(candidates[i].second);
  return out;
}

}  // namespace mvg::consistency
