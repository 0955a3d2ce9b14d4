#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "mvg/refine.hpp"

using namespace mvg;
using namespace mvg::refine;
using mvg::test::deg;

namespace {

harness::SyntheticScene plane_scene(double tilt, int size = 64) {
  return harness::make_scene(test::single_view_spec(test::tilted_plane(tilt), size));
}

double max_abs_diff(const DepthMap& a, const DepthMap& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values.data[i] - b.values.data[i]));
  return m;
}

template <typename T>
Grid<T> shift_right(const Grid<T>& g) {
  Grid<T> out = g;
  for (int y = 0; y < g.height; ++y)
    for (int x = 1; x < g.width; ++x) out(x, y) = g(x - 1, y);
  return out;
}

}  // namespace

TEST_CASE("reflect-101 padding of a row") {
  Grid<double> row(3, 1);
  row(0, 0) = 1, row(1, 0) = 2, row(2, 0) = 3;
  const Grid<double> p = mirror_pad(row, 1);
  REQUIRE(p.width == 5);
  REQUIRE(p.height == 3);
  const double expect[5] = {2, 1, 2, 3, 2};
  for (int x = 0; x < 5; ++x) CHECK(p(x, 1) == expect[x]);
  CHECK(reflect101(-2, 3) == 2);
  CHECK(reflect101(4, 3) == 0);
}

TEST_CASE("mirror_pad identity cases and limits") {
  std::mt19937_64 rng(1);
  const DepthMap d = test::random_depth(9, 7, rng, 1.0, 2.0, 0.2);
  const DepthMap p0 = mirror_pad(d, 0);
  CHECK(p0.values == d.values);
  CHECK(p0.valid == d.valid);
  for (int n : {1, 3, 6}) {
    const DepthMap p = mirror_pad(d, n);
    CHECK(p.width() == 9 + 2 * n);
    CHECK(crop(p.values, n) == d.values);
    CHECK(crop(p.valid, n) == d.valid);
  }
  CHECK_THROWS_AS(mirror_pad(d, 7), DomainError);
  const ImageBuffer img = test::random_image(5, 4, rng);
  CHECK(crop(mirror_pad(img, 2).rgb, 2) == img.rgb);
}

TEST_CASE("bilateral filter on constant depth and uniform guide") {
  std::mt19937_64 rng(2);
  const RefineConfig cfg;
  DepthMap flat(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) flat.set(x, y, 4.2);
  const DepthMap out = joint_bilateral_filter(flat, test::random_image(16, 16, rng), cfg);
  CHECK(max_abs_diff(out, flat) < 1e-12);

  // Uniform guide: the range kernel is constant, leaving a Gaussian blur.
  const DepthMap d = test::random_depth(12, 10, rng);
  const DepthMap blurred = joint_bilateral_filter(d, test::uniform_image(12, 10), cfg);
  double worst = 0.0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) {
      double num = 0.0, den = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const double w = std::exp(-(dx * dx + dy * dy) / 2.0);
          num += w * d(reflect101(x + dx, 12), reflect101(y + dy, 10));
          den += w;
        }
      worst = std::max(worst, std::abs(blurred(x, y) - num / den));
    }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(joint_bilateral_filter(d, test::uniform_image(11, 10), cfg), DomainError);
}

TEST_CASE("bilateral filter matches the direct loop") {
  std::mt19937_64 rng(3);
  RefineConfig cfg;
  cfg.sigma_range = 0.2;
  for (int trial = 0; trial < 10; ++trial) {
    const DepthMap d = test::random_depth(32, 32, rng, 0.5, 4.0, 0.1);
    const ImageBuffer g = test::random_image(32, 32, rng);
    const DepthMap fast = joint_bilateral_filter(d, g, cfg);
    const DepthMap ref = harness::oracle::bilateral_direct(d, g, cfg.sigma_spatial, cfg.sigma_range);
    CHECK(max_abs_diff(fast, ref) <= 1e-12);
    CHECK(fast.valid == d.valid);
  }
}

TEST_CASE("bilateral output is a convex combination of its window") {
  std::mt19937_64 rng(4);
  const DepthMap d = test::random_depth(20, 20, rng, 1.0, 5.0, 0.15);
  const DepthMap out = joint_bilateral_filter(d, test::random_image(20, 20, rng), RefineConfig{});
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) {
      if (!d.is_valid(x, y)) {
        CHECK_FALSE(out.is_valid(x, y));
        continue;
      }
      double lo = 1e300, hi = -1e300;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = reflect101(x + dx, 20), yy = reflect101(y + dy, 20);
          if (!d.is_valid(xx, yy)) continue;
          lo = std::min(lo, d(xx, yy));
          hi = std::max(hi, d(xx, yy));
        }
      CHECK(out(x, y) >= lo - 1e-12);
      CHECK(out(x, y) <= hi + 1e-12);
    }
}

TEST_CASE("normals of a fronto-parallel plane") {
  const auto scene = plane_scene(0.0);
  const View& v = scene.views[0];
  const NormalMap n = estimate_normals(v.depth, v.intrinsics, RefineConfig{});
  double worst = 0.0;
  for (int y = 0; y < n.height(); ++y)
    for (int x = 0; x < n.width(); ++x) {
      REQUIRE(n.is_valid(x, y));
      worst = std::max(worst, (n(x, y) - Vec3(0, 0, -1)).norm());
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("normals of a tilted plane and a sphere") {
  const auto scene = plane_scene(deg(30));
  const View& v = scene.views[0];
  const NormalMap n = estimate_normals(v.depth, v.intrinsics, RefineConfig{});
  const Mask interior = harness::interior_mask(n.width(), n.height(), 1);
  double worst = 0.0;
  for (int y = 0; y < n.height(); ++y)
    for (int x = 0; x < n.width(); ++x)
      if (interior(x, y)) worst = std::max(worst, (n(x, y) - scene.gt_normals[0](x, y)).norm());
  CHECK(worst < 1e-3);

  harness::SceneSpec spec;
  spec.surface = harness::Surface::sphere(Vec3(0, 0, 5), 1.0);
  spec.rig.views = 1;
  spec.rig.width = spec.rig.height = 128;
  const auto sphere = harness::make_scene(spec);
  const View& sv = sphere.views[0];
  const NormalMap sn = estimate_normals(sv.depth, sv.intrinsics, RefineConfig{});
  const auto stats = harness::angular_error(sn, sphere.gt_normals[0]);
  CHECK(stats.count > 1000);
  CHECK(deg(stats.median_deg) < 5e-3);
}

TEST_CASE("normals are unit and face the camera") {
  std::mt19937_64 rng(5);
  const auto k = intrinsics_from_fov(1.0, 1.0, 24, 24);
  const DepthMap d = test::random_depth(24, 24, rng, 2.0, 2.2, 0.1);
  const NormalMap n = estimate_normals(d, k, RefineConfig{});
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      if (!n.is_valid(x, y)) continue;
      CHECK(std::abs(n(x, y).norm() - 1.0) < 1e-12);
      CHECK(n(x, y).dot(unproject_camera(x, y, d(x, y), k)) <= 0.0);
    }
}

TEST_CASE("adjustment factors") {
  const auto k = intrinsics_from_fov(1.0, 1.0, 33, 33);
  const auto f = depth_adjustment_factors(Vec3(0, 0, 1), k, k.cx, k.cy);
  CHECK(f.eta == 1.0);
  for (double g : f.gamma) CHECK(g == 1.0);

  // On a plane the factor ratio is the ratio of depths.
  const auto scene = plane_scene(deg(35), 33);
  const View& v = scene.views[0];
  const Vec3 n = scene.gt_normals[0](16, 12);
  const auto p = depth_adjustment_factors(n, v.intrinsics, 16, 12);
  for (int j = 0; j < 8; ++j) {
    const double ratio = v.depth(16 + kRing[j][0], 12 + kRing[j][1]) / v.depth(16, 12);
    CHECK(p.eta / p.gamma[j] == doctest::Approx(ratio).epsilon(1e-12));
  }

  // Lipschitz in the pixel offset.
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Vec3 nn = test::random_unit(rng);
    const auto q = depth_adjustment_factors(nn, v.intrinsics, 5.0, 20.0);
    for (int j = 0; j < 8; ++j) {
      const double step = std::abs(kRing[j][0]) + std::abs(kRing[j][1]);
      CHECK(std::abs(q.gamma[j] - q.eta) <= step / v.intrinsics.fx + 1e-15);
    }
  }
}

TEST_CASE("refine_depth is idempotent on a fronto-parallel plane") {
  const auto scene = plane_scene(0.0);
  const View& v = scene.views[0];
  RefineDiagnostics diag;
  const DepthMap out = refine_depth(v.depth, scene.gt_normals[0], test::uniform_image(64, 64),
                                    v.intrinsics, RefineConfig{}, &diag);
  CHECK(max_abs_diff(out, v.depth) < 1e-9);
  CHECK(diag.fallback_pixels == 0);
}

TEST_CASE("refine_depth on a tilted plane") {
  const auto scene = plane_scene(deg(30));
  const View& v = scene.views[0];
  const Mask interior = harness::interior_mask(64, 64, 1);
  const DepthMap exact = refine_depth(v.depth, scene.gt_normals[0], v.image, v.intrinsics, RefineConfig{});
  CHECK(harness::depth_rms(exact, scene.gt_depth[0], &interior) < 1e-6);

  DepthMap noisy = v.depth;
  harness::add_depth_noise(noisy, 0.01, harness::NoiseKind::Uniform, 9);
  const DepthMap out = refine_depth(noisy, scene.gt_normals[0], v.image, v.intrinsics, RefineConfig{});
  const double before = harness::depth_rms(noisy, scene.gt_depth[0], &interior);
  const double after = harness::depth_rms(out, scene.gt_depth[0], &interior);
  CHECK(after < before);
  CHECK(after < 0.7 * before);
}

TEST_CASE("refine_depth matches the ray-plane oracle") {
  std::mt19937_64 rng(8);
  const auto k = intrinsics_from_fov(0.9, 0.9, 16, 16);
  for (int trial = 0; trial < 10; ++trial) {
    const DepthMap d = test::random_depth(16, 16, rng, 2.0, 3.0, 0.1);
    const NormalMap n = test::random_normals(16, 16, rng);
    const ImageBuffer img = test::random_image(16, 16, rng);
    RefineConfig cfg;
    cfg.alpha = 3.0;
    const DepthMap fast = refine_depth(d, n, img, k, cfg);
    const DepthMap ref = harness::oracle::refine_direct(d, n, img, k, cfg.alpha);
    CHECK(max_abs_diff(fast, ref) <= 1e-12);
  }
}

TEST_CASE("refine_depth keeps isolated pixels") {
  const auto k = intrinsics_from_fov(1.0, 1.0, 3, 3);
  DepthMap d(3, 3);
  d.set(1, 1, 2.0);
  NormalMap n(3, 3);
  n.set(1, 1, Vec3(0, 0, -1));
  RefineDiagnostics diag;
  const DepthMap out = refine_depth(d, n, test::uniform_image(3, 3), k, RefineConfig{}, &diag);
  CHECK(out(1, 1) == 2.0);
  CHECK(diag.fallback_pixels == 1);
}

TEST_CASE("edge-aware discrepancy") {
  std::mt19937_64 rng(10);
  const DepthMap d = test::random_depth(20, 20, rng);
  const ImageBuffer img = test::random_image(20, 20, rng);
  CHECK(edge_aware_discrepancy(d, d, img) == 0.0);

  DepthMap shifted = d;
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) shifted.set(x, y, d(x, y) + std::exp(1.0) - 1.0);
  CHECK(edge_aware_discrepancy(d, shifted, test::uniform_image(20, 20)) ==
        doctest::Approx(2.0).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    const DepthMap a = test::random_depth(24, 18, rng, 1.0, 3.0, 0.1);
    const DepthMap b = test::random_depth(24, 18, rng, 1.0, 3.0, 0.1);
    const ImageBuffer g = test::random_image(24, 18, rng);
    CHECK(std::abs(edge_aware_discrepancy(a, b, g) - harness::oracle::edge_aware_direct(a, b, g)) <=
          1e-12);
  }
}

TEST_CASE("dense operators commute with an interior shift") {
  std::mt19937_64 rng(12);
  const int w = 20, h = 14;
  const auto k = intrinsics_from_fov(1.0, 1.0, w, h);
  const DepthMap d = test::random_depth(w, h, rng, 2.0, 2.5);
  const ImageBuffer img = test::random_image(w, h, rng);
  DepthMap ds;
  ds.values = shift_right(d.values);
  ds.valid = shift_right(d.valid);
  ImageBuffer is;
  is.rgb = shift_right(img.rgb);
  const RefineConfig cfg;

  const DepthMap b0 = joint_bilateral_filter(d, img, cfg), b1 = joint_bilateral_filter(ds, is, cfg);
  // Refinement uses a fronto-parallel normal field so the ray geometry does
  // not depend on the absolute column.
  NormalMap flat(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) flat.set(x, y, Vec3(0, 0, -1));
  const DepthMap r0 = refine_depth(d, flat, img, k, cfg), r1 = refine_depth(ds, flat, is, k, cfg);
  for (int y = 2; y < h - 2; ++y)
    for (int x = 3; x < w - 2; ++x) {
      CHECK(b1(x, y) == doctest::Approx(b0(x - 1, y)).epsilon(1e-14));
      CHECK(r1(x, y) == doctest::Approx(r0(x - 1, y)).epsilon(1e-14));
    }
}
