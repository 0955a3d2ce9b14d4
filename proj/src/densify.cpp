#include "mvg/densify.hpp"

#include <algorithm>
#include <cmath>

#include "mvg/parallel.hpp"
#include "mvg/spatial_index.hpp"

namespace mvg::densify {

void DensifyConfig::validate() const {
  if (interval < 1) throw ConfigError("densify: interval must be >= 1");
  if (!(init_opacity > 0.0 && init_opacity < 1.0))
    throw ConfigError("densify: init_opacity must lie in (0, 1)");
  if (knn_k < 1) throw ConfigError("densify: knn_k must be >= 1");
  if (stride < 1) throw ConfigError("densify: stride must be >= 1");
  if (max_new_per_view < 1) throw ConfigError("densify: max_new_per_view must be >= 1");
  if (std::isnan(scale_threshold) || scale_threshold < 0.0)
    throw ConfigError("densify: scale_threshold must be >= 0");
}

Vec3 canonical_perpendicular(const Vec3& r) {
  int axis = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(r[i]) < std::abs(r[axis])) axis = i;
  return r.cross(Vec3::Unit(axis)).normalized();
}

Quat rotation_from_normal(const Vec3& n, const Vec3& r) {
  const Vec3 cross = r.cross(n);
  const double s = cross.norm();
  const double c = n.dot(r);
  if (s < 1e-8) {
    if (c > 0.0) return Quat::Identity();
    const Vec3 p = canonical_perpendicular(r);
    return Quat(0.0, p.x(), p.y(), p.z());
  }
  // Axis made exactly orthogonal to r; near pi its residual direction error
  // is scaled by sin(theta) in R r.
  const Vec3 axis = (cross - cross.dot(r) * r).normalized();
  const double half = 0.5 * std::atan2(s, c);
  const Vec3 v = std::sin(half) * axis;
  return Quat(std::cos(half), v.x(), v.y(), v.z());
}

Vec3 rgb_to_sh0(const Vec3& rgb) { return (rgb.array() - 0.5).matrix() / kC0; }

Vec3 sh0_to_rgb(const Vec3& sh0) { return (sh0 * kC0).array() + 0.5; }

std::vector<double> scale_from_neighbors(std::span<const Vec3> points, int k) {
  if (k < 1) throw DomainError("scale_from_neighbors: k must be >= 1");
  if (points.size() < static_cast<std::size_t>(k) + 1)
    throw DomainError("scale_from_neighbors: need at least k + 1 points");
  std::vector<double> s = mean_knn_distance(points, static_cast<std::size_t>(k));
  for (auto& v : s) v = std::max(v, 1e-6);
  return s;
}

DensifyBatch densify_from_depth(const View& ref, const DepthMap& refined_depth, const Mask& mask,
                                const NormalMap& normals, const DensifyConfig& cfg) {
  cfg.validate();
  const int w = refined_depth.width(), h = refined_depth.height();
  if (mask.width != w || mask.height != h || normals.width() != w || normals.height() != h ||
      ref.image.width() != w || ref.image.height() != h)
    throw DomainError("densify_from_depth: inputs are not co-registered");

  DensifyBatch batch;
  std::vector<std::array<int, 2>> candidates;
  for (int y = 0; y < h; y += cfg.stride)
    for (int x = 0; x < w; x += cfg.stride) {
      if (!mask(x, y) || !refined_depth.is_valid(x, y)) continue;
      if (!normals.is_valid(x, y)) {
        ++batch.skipped_no_normal;
        continue;
      }
      candidates.push_back({x, y});
    }
  if (candidates.size() > cfg.max_new_per_view) {
    std::vector<std::array<int, 2>> thinned(cfg.max_new_per_view);
    for (std::size_t i = 0; i < thinned.size(); ++i)
      thinned[i] = candidates[i * candidates.size() / thinned.size()];
    candidates = std::move(thinned);
  }

  const double opacity = logit(cfg.init_opacity);
  const Mat3 rt = ref.pose.rotation.transpose();
  batch.surfels.resize(candidates.size());
  batch.pixels = candidates;
  parallel_for(candidates.size(), [&](std::size_t i) {
    const auto [x, y] = candidates[i];
    Surfel& s = batch.surfels[i];
    s.position = unproject(x, y, refined_depth(x, y), ref.intrinsics, ref.pose);
    s.normal = (rt * normals(x, y)).normalized();
    s.rotation = rotation_from_normal(s.normal);
    s.opacity_logit = opacity;
    s.sh0 = rgb_to_sh0(ref.image(x, y));
  });

  const std::size_t n = batch.surfels.size();
  if (n == 1) {
    // No neighbours: use the pixel lattice spacing at that depth.
    const auto [x, y] = candidates[0];
    batch.surfels[0].scale.setConstant(
        std::max(1e-6, cfg.stride * refined_depth(x, y) / ref.intrinsics.fx));
  } else if (n > 1) {
    std::vector<Vec3> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = batch.surfels[i].position;
    const int k = std::min<int>(cfg.knn_k, static_cast<int>(n) - 1);
    const std::vector<double> scales = scale_from_neighbors(pts, k);
    for (std::size_t i = 0; i < n; ++i) batch.surfels[i].scale.setConstant(scales[i]);
  }
  return batch;
}

RefinedView refine_view(const View& v, const refine::RefineConfig& cfg) {
  RefinedView out;
  const NormalMap initial = refine::estimate_normals(v.depth, v.intrinsics, cfg);
  out.depth = refine::refine_depth(v.depth, initial, v.image, v.intrinsics, cfg);
  out.normals = refine::estimate_normals(out.depth, v.intrinsics, cfg);
  return out;
}

Mask large_primitive_footprint(const SurfelCloud& cloud, const View& ref, double scale_threshold) {
  const int w = ref.intrinsics.width, h = ref.intrinsics.height;
  Mask out(w, h, 0);
  for (const Surfel& s : cloud) {
    const double extent = s.scale.maxCoeff();
    if (!(extent > scale_threshold)) continue;
    const auto p = project(s.position, ref.intrinsics, ref.pose);
    if (!p) continue;
    const double r = extent * ref.intrinsics.fx / p->depth;
    const int x0 = std::max(0, static_cast<int>(std::floor(p->u - r)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(p->u + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p->v - r)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(p->v + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if ((x - p->u) * (x - p->u) + (y - p->v) * (y - p->v) <= r * r) out(x, y) = 1;
    // The disk always covers the pixel holding its centre.
    const int cx = static_cast<int>(std::lround(p->u)), cy = static_cast<int>(std::lround(p->v));
    if (out.contains(cx, cy)) out(cx, cy) = 1;
  }
  return out;
}

namespace {

/// Indices of surfels in [0, limit) that project inside `area` and agree
/// with the view's depth there (1% relative).
std::vector<std::size_t> surfels_in_area(const SurfelCloud& cloud, std::size_t limit,
                                         const View& v, const DepthMap& depth, const Mask& area) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < limit; ++i) {
    const auto p = project(cloud[i].position, v.intrinsics, v.pose);
    if (!p) continue;
    const int x = static_cast<int>(std::lround(p->u)), y = static_cast<int>(std::lround(p->v));
    if (!area.contains(x, y) || !area(x, y) || !depth.is_valid(x, y)) continue;
    if (std::abs(p->depth - depth(x, y)) > 0.01 * depth(x, y)) continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace

SurfelCloud adaptive_densify(const SurfelCloud& scene, const std::vector<View>& views,
                             const DensifyParams& params, DensifyState& state,
                             DensifyReport* report, std::map<int, RefinedView>* refined_out) {
  params.kde.validate();
  params.thresholds.validate();
  params.densify.validate();
  params.refine.validate();
  const auto& thr = params.thresholds;
  const int needed = std::max({thr.near.min_views, thr.mid.min_views, thr.far.min_views});
  if (static_cast<int>(views.size()) < needed + 1)
    throw ConfigError("adaptive_densify: " + std::to_string(views.size()) + " views, need " +
                      std::to_string(needed + 1));

  std::vector<const View*> order;
  for (const View& v : views) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](const View* a, const View* b) { return a->id < b->id; });

  // Every view, processed or not, serves as a source with its refined depth.
  std::vector<View> refined_views(views.size());
  std::vector<RefinedView> refined(views.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    refined[i] = refine_view(*order[i], params.refine);
    refined_views[i] = *order[i];
    refined_views[i].depth = refined[i].depth;
  }

  SurfelCloud cloud = scene;
  DensifyReport local;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const View& ref = refined_views[i];
    ViewReport vr;
    vr.id = ref.id;
    if (state.processed_ids.count(ref.id)) {
      vr.processed = true;
      local.views.push_back(vr);
      continue;
    }
    try {
      const auto seg = quantile::segment_depth(ref.depth, params.kde);
      vr.q_near = seg.q_near;
      vr.q_far = seg.q_far;
      const auto srcs = consistency::select_sources(refined_views, ref);
      const auto cons = consistency::consistency_mask(ref, srcs, seg, thr);
      vr.rejected = ref.depth.valid_count() - (cons.passed_near + cons.passed_mid + cons.passed_far);

      Mask area = large_primitive_footprint(cloud, ref, params.densify.scale_threshold);
      for (std::size_t p = 0; p < area.size(); ++p) area.data[p] &= cons.mask.data[p];

      const DensifyBatch batch =
          densify_from_depth(ref, ref.depth, area, refined[i].normals, params.densify);
      vr.skipped_no_normal = batch.skipped_no_normal;
      for (const auto& [x, y] : batch.pixels) {
        if (seg.near_mask(x, y)) {
          ++vr.new_near;
        } else if (seg.far_mask(x, y)) {
          ++vr.new_far;
        } else {
          ++vr.new_mid;
        }
      }

      const std::size_t existing = cloud.size();
      const auto to_reset = surfels_in_area(cloud, existing, ref, ref.depth, area);
      cloud.insert(cloud.end(), batch.surfels.begin(), batch.surfels.end());
      if (!to_reset.empty() && cloud.size() > 1) {
        std::vector<Vec3> pts(cloud.size());
        for (std::size_t p = 0; p < cloud.size(); ++p) pts[p] = cloud[p].position;
        const KdTree tree(pts);
        const std::size_t k = std::min<std::size_t>(params.densify.knn_k, cloud.size() - 1);
        const double opacity = logit(params.densify.init_opacity);
        for (std::size_t idx : to_reset) {
          double sum = 0.0;
          for (const auto& nb : tree.knn(pts[idx], k, idx)) sum += nb.distance;
          cloud[idx].scale.setConstant(std::max(1e-6, sum / static_cast<double>(k)));
          cloud[idx].opacity_logit = opacity;
        }
      }
      vr.reset = to_reset.size();
      vr.processed = true;
      state.processed_ids.insert(ref.id);
      local.new_near += vr.new_near;
      local.new_mid += vr.new_mid;
      local.new_far += vr.new_far;
      local.masks[ref.id] = cons.mask;
    } catch (const Error& e) {
      vr.error = e.what();
    }
    local.views.push_back(vr);
  }

  if (refined_out)
    for (std::size_t i = 0; i < order.size(); ++i) (*refined_out)[order[i]->id] = refined[i];
  if (report) *report = std::move(local);
  return cloud;
}

}  // namespace mvg::densify
