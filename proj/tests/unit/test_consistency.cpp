#include <doctest.h>

#include "helpers.hpp"
#include "mvg/consistency.hpp"

using namespace mvg;
using namespace mvg::consistency;

namespace {

harness::SyntheticScene cap_sphere(int views, int size = 128) {
  harness::SceneSpec spec;
  spec.surface = harness::Surface::sphere(Vec3(0, 0, 5), 1.0);
  spec.rig.views = views;
  spec.rig.width = spec.rig.height = size;
  return harness::make_scene(spec);
}

harness::SyntheticScene two_view_plane(double tilt) {
  harness::SceneSpec spec;
  spec.surface = test::tilted_plane(tilt);
  spec.rig.views = 2;
  spec.rig.width = spec.rig.height = 256;
  return harness::make_scene(spec);
}

std::vector<const View*> others(const std::vector<View>& views, int ref) {
  std::vector<const View*> out;
  for (const View& v : views)
    if (v.id != ref) out.push_back(&v);
  return out;
}

/// Ref pixels whose surface point is resolved by the ref and at least `need`
/// sources.
Mask mutually_visible(const harness::Surface& s, const View& ref, const std::vector<const View*>& srcs,
                      int need) {
  Mask m(ref.depth.width(), ref.depth.height(), 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!ref.depth.is_valid(x, y)) continue;
      const Vec3 p = unproject(x, y, ref.depth(x, y), ref.intrinsics, ref.pose);
      if (!harness::oracle::observed(s, ref, p)) continue;
      int seen = 0;
      for (const View* v : srcs) seen += harness::oracle::observed(s, *v, p);
      m(x, y) = seen >= need;
    }
  return m;
}

/// Pixel of the ref view reached from source pixel (x, y) via the surface.
std::optional<Vec2> via_surface(const harness::Surface& s, const View& src, const View& ref, double x,
                                double y) {
  const Vec3 ray = src.pose.rotation.transpose() * unproject_camera(x, y, 1.0, src.intrinsics);
  const auto t = s.intersect(src.pose.center(), ray);
  if (!t) return std::nullopt;
  const auto p = project(src.pose.center() + *t * ray, ref.intrinsics, ref.pose);
  if (!p) return std::nullopt;
  return Vec2(p->u, p->v);
}

double pass_rate(const ConsistencyResult& r, const Mask& region) {
  std::size_t total = 0, pass = 0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (!region.data[i]) continue;
    ++total;
    pass += r.mask.data[i];
  }
  return total ? static_cast<double>(pass) / static_cast<double>(total) : 0.0;
}

bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i] && !b.data[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("threshold validation and defaults") {
  const RegionThresholds t;
  CHECK(t.near == Thresholds{1.0, 0.01, 3});
  CHECK(t.mid == Thresholds{1.0, 0.001, 3});
  CHECK(t.far == Thresholds{1.0, 0.01, 3});
  CHECK_THROWS_AS((Thresholds{0.0, 0.01, 3}.validate()), ConfigError);
  CHECK_THROWS_AS((Thresholds{1.0, -0.01, 3}.validate()), ConfigError);
  CHECK_THROWS_AS((Thresholds{1.0, 0.01, 0}.validate()), ConfigError);
}

TEST_CASE("identity cycle is exact") {
  const auto scene = cap_sphere(1, 64);
  const View& v = scene.views[0];
  for (int y = 0; y < 64; y += 3)
    for (int x = 0; x < 64; x += 3) {
      if (!v.depth.is_valid(x, y)) continue;
      const auto c = reproject_cycle(x, y, v.depth(x, y), v, v);
      REQUIRE(c);
      CHECK(c->u == x);
      CHECK(c->v == y);
      CHECK(c->depth == v.depth(x, y));
    }
}

TEST_CASE("plane cycles between two views") {
  const auto scene = two_view_plane(test::deg(20));
  const View& ref = scene.views[0];
  const View& src = scene.views[1];
  std::size_t checked = 0;
  for (int y = 2; y < 254; ++y)
    for (int x = 2; x < 254; ++x) {
      const auto c = reproject_cycle(x, y, ref.depth(x, y), ref, src);
      if (!c) continue;
      ++checked;
      CHECK(std::hypot(c->u - x, c->v - y) < 0.51);
      CHECK(std::abs(c->depth - ref.depth(x, y)) / ref.depth(x, y) < 1e-3);
    }
  CHECK(checked > 40000);

  // Nearest sampling moves the source point by at most half a pixel per axis;
  // the ref error is that offset through the local source-to-ref Jacobian.
  for (int y = 4; y < 252; y += 7)
    for (int x = 4; x < 252; x += 7) {
      const auto c = reproject_cycle(x, y, ref.depth(x, y), ref, src, Sampling::Nearest);
      if (!c) continue;
      const auto q = project(unproject(x, y, ref.depth(x, y), ref.intrinsics, ref.pose), src.intrinsics,
                             src.pose);
      const auto a = via_surface(scene.spec.surface, src, ref, q->u, q->v);
      const auto du = via_surface(scene.spec.surface, src, ref, q->u + 1e-3, q->v);
      const auto dv = via_surface(scene.spec.surface, src, ref, q->u, q->v + 1e-3);
      REQUIRE((a && du && dv));
      const double bound = 0.5 * ((*du - *a).norm() + (*dv - *a).norm()) / 1e-3;
      CHECK(std::hypot(c->u - x, c->v - y) <= bound * 1.01 + 1e-9);
    }

  // +10% on the reference depth breaks the cycle.
  const auto bad = reproject_cycle(128, 128, 1.1 * ref.depth(128, 128), ref, src);
  REQUIRE(bad);
  CHECK(std::abs(bad->depth - 1.1 * ref.depth(128, 128)) / (1.1 * ref.depth(128, 128)) > 0.01);
}

TEST_CASE("misses abstain") {
  const auto scene = two_view_plane(0.0);
  const View& ref = scene.views[0];
  View src = scene.views[1];
  CHECK_FALSE(reproject_cycle(128, 128, 1e-3, ref, src));
  for (int y = 0; y < src.depth.height(); ++y)
    for (int x = 0; x < src.depth.width(); ++x) src.depth.invalidate(x, y);
  CHECK_FALSE(reproject_cycle(128, 128, ref.depth(128, 128), ref, src));
  CHECK_THROWS_AS(reproject_cycle(128, 128, 0.0, ref, src), InvalidDepthError);
}

TEST_CASE("swapping a symmetric pair keeps the pass count") {
  // Cap views 1 and 2 mirror each other across the axis of a fronto plane.
  harness::SceneSpec spec;
  spec.surface = test::tilted_plane(0.0);
  spec.rig.views = 3;
  spec.rig.width = spec.rig.height = 128;
  const auto scene = harness::make_scene(spec);
  const View& a = scene.views[1];
  const View& b = scene.views[2];
  const auto seg_a = quantile::segment_depth(a.depth, quantile::KdeConfig{});
  const auto seg_b = quantile::segment_depth(b.depth, quantile::KdeConfig{});
  for (const auto sampling : {Sampling::Nearest, Sampling::Bilinear}) {
    const auto t = RegionThresholds::uniform({1.0, 0.001, 1});
    const auto ra = consistency_mask(a, {&b}, seg_a, t, sampling);
    const auto rb = consistency_mask(b, {&a}, seg_b, t, sampling);
    const double na = static_cast<double>(ra.passed_near + ra.passed_mid + ra.passed_far);
    const double nb = static_cast<double>(rb.passed_near + rb.passed_mid + rb.passed_far);
    CHECK(na > 1000);
    CHECK(std::abs(na - nb) <= 0.01 * std::max(na, nb));
  }
}

TEST_CASE("sphere views agree and a scaled view is rejected") {
  const auto scene = cap_sphere(4, 256);
  const View& ref = scene.views[0];
  const auto srcs = others(scene.views, 0);
  const auto seg = quantile::segment_depth(ref.depth, quantile::KdeConfig{});
  const Mask vis = mutually_visible(scene.spec.surface, ref, srcs, 3);
  const auto exact = consistency_mask(ref, srcs, seg, RegionThresholds{});
  const auto loose = consistency_mask(ref, srcs, seg, RegionThresholds::uniform({1.0, 0.01, 3}));
  CHECK(pass_rate(exact, vis) >= 0.99);
  CHECK(pass_rate(loose, vis) >= 0.99);
  CHECK(subset(exact.mask, loose.mask));

  View scaled = ref;
  for (auto& d : scaled.depth.values.data) d *= 1.05;
  const auto seg_s = quantile::segment_depth(scaled.depth, quantile::KdeConfig{});
  const auto bad = consistency_mask(scaled, srcs, seg_s, RegionThresholds{});
  CHECK(pass_rate(bad, vis) < 0.05);

  CHECK_THROWS_AS(consistency_mask(ref, {srcs[0], srcs[1]}, seg, RegionThresholds{}), ConfigError);
}

TEST_CASE("an outlier pixel fails in every region") {
  const auto scene = cap_sphere(4);
  View ref = scene.views[0];
  const auto srcs = others(scene.views, 0);
  const int x = 64, y = 64;
  ref.depth.set(x, y, ref.depth(x, y) * 0.8);
  const auto seg = quantile::segment_depth(ref.depth, quantile::KdeConfig{});
  for (const auto& t : {Thresholds{1.0, 0.01, 3}, Thresholds{1.0, 0.001, 3}}) {
    const auto r = consistency_mask(ref, srcs, seg, RegionThresholds::uniform(t));
    CHECK(r.mask(x, y) == 0);
    CHECK(r.mask(x + 2, y) == 1);
  }
}

TEST_CASE("tightening the depth tolerance shrinks the mask") {
  auto scene = cap_sphere(5, 96);
  harness::add_depth_noise(scene.views[0].depth, 0.004, harness::NoiseKind::Gaussian, 3);
  const View& ref = scene.views[0];
  const auto srcs = others(scene.views, 0);
  const auto seg = quantile::segment_depth(ref.depth, quantile::KdeConfig{});
  Mask prev;
  for (double tol : {0.05, 0.01, 0.005, 0.001, 0.0001}) {
    const auto r = consistency_mask(ref, srcs, seg, RegionThresholds::uniform({1.0, tol, 3}));
    if (prev.size()) CHECK(subset(r.mask, prev));
    prev = r.mask;
  }
}

TEST_CASE("source selection") {
  const auto scene = cap_sphere(6, 32);
  const auto s = select_sources(scene.views, scene.views[0]);
  CHECK(s.size() == 4);
  for (const View* v : s) CHECK(v->id != 0);
  std::vector<const View*> again = select_sources(scene.views, scene.views[0]);
  CHECK(again == s);

  harness::SceneSpec spec;
  spec.surface = harness::Surface::sphere(Vec3(0, 0, 5), 1.0);
  spec.rig.layout = harness::RigLayout::Surround;
  spec.rig.width = spec.rig.height = 32;
  const auto around = harness::make_scene(spec);
  CHECK(select_sources(around.views, around.views[0]).empty());
}
