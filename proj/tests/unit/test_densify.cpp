#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "mvg/densify.hpp"
#include "mvg/pipeline.hpp"

using namespace mvg;
using namespace mvg::densify;

namespace {

Mat3 to_matrix(const Quat& q) { return q.normalized().toRotationMatrix(); }

harness::SyntheticScene cap_sphere(int size, double noise = 0.0) {
  harness::SceneSpec spec;
  spec.surface = harness::Surface::sphere(Vec3(0, 0, 5), 1.0);
  spec.rig.width = spec.rig.height = size;
  spec.noise = noise;
  spec.seed = 5;
  return harness::make_scene(spec);
}

/// Coarse cloud of large surfels covering what view 0 sees.
SurfelCloud coarse_cloud(const harness::SyntheticScene& scene) {
  DensifyConfig c;
  c.stride = 16;
  const View& v = scene.views[0];
  return densify_from_depth(v, v.depth, v.depth.valid, scene.gt_normals[0], c).surfels;
}

}  // namespace

TEST_CASE("rotation from normal, simple cases") {
  const Vec3 z = Vec3::UnitZ();
  const Quat id = rotation_from_normal(z, z);
  CHECK(id.w() == 1.0);
  CHECK(id.vec().norm() == 0.0);

  const Quat flip = rotation_from_normal(-z, z);
  CHECK(std::abs(flip.norm() - 1.0) < 1e-15);
  CHECK((to_matrix(flip) * z + z).norm() < 1e-12);

  const Quat q = rotation_from_normal(Vec3::UnitX(), z);
  CHECK((to_matrix(q) * z - Vec3::UnitX()).norm() < 1e-9);
  CHECK((to_matrix(q) - harness::oracle::rotation_between(z, Vec3::UnitX())).norm() < 1e-9);
  CHECK((to_matrix(q) - harness::oracle::rodrigues(Vec3::UnitY(), test::kPi / 2)).norm() < 1e-9);
}

TEST_CASE("rotation from normal against Rodrigues") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 n = test::random_unit(rng);
    const Vec3 r = i % 3 ? Vec3::UnitZ() : test::random_unit(rng);
    const Quat q = rotation_from_normal(n, r);
    CHECK(std::abs(q.norm() - 1.0) < 1e-12);
    CHECK((to_matrix(q) * r - n).norm() < 1e-9);
    CHECK((to_matrix(q) - harness::oracle::rotation_between(r, n)).norm() < 1e-9);
  }
  // Antipodal and nearly antipodal inputs.
  for (const Vec3& r : std::vector<Vec3>{Vec3::UnitZ(), Vec3::UnitX(), Vec3(1, 2, 3).normalized()}) {
    const Quat q = rotation_from_normal(-r, r);
    CHECK((to_matrix(q) * r + r).norm() < 1e-9);
    CHECK(std::abs(canonical_perpendicular(r).dot(r)) < 1e-15);
    const Vec3 near = (-r + 1e-7 * canonical_perpendicular(r)).normalized();
    CHECK((to_matrix(rotation_from_normal(near, r)) * r - near).norm() < 1e-9);
  }
}

TEST_CASE("spherical harmonic colour") {
  CHECK(rgb_to_sh0(Vec3::Constant(0.5)).norm() == 0.0);
  const Vec3 white = rgb_to_sh0(Vec3::Ones());
  for (int c = 0; c < 3; ++c) CHECK(white[c] == doctest::Approx(1.7725).epsilon(1e-4));
  CHECK(white[0] == doctest::Approx(0.5 * 2.0 * std::sqrt(test::kPi)).epsilon(1e-12));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 c(u(rng), u(rng), u(rng));
    CHECK((sh0_to_rgb(rgb_to_sh0(c)) - c).norm() < 1e-12);
  }
}

TEST_CASE("scales from neighbours") {
  std::vector<Vec3> grid;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) grid.emplace_back(0.2 * x, 0.2 * y, 1.0);
  const auto s = scale_from_neighbors(grid, 1);
  for (double v : s) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

  const std::vector<Vec3> pair = {Vec3(0, 0, 0), Vec3(0, 0.7, 0)};
  for (double v : scale_from_neighbors(pair, 1)) CHECK(v == doctest::Approx(0.7));

  const std::vector<Vec3> same = {Vec3(1, 1, 1), Vec3(1, 1, 1)};
  for (double v : scale_from_neighbors(same, 1)) CHECK(v == 1e-6);

  std::mt19937_64 rng(3);
  std::vector<Vec3> pts(200);
  for (auto& p : pts) p = test::random_unit(rng) * 2.0;
  const auto fast = scale_from_neighbors(pts, 3);
  const auto ref = harness::oracle::knn_mean_bruteforce(pts, 3);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(fast[i] - ref[i]) <= 1e-12);

  CHECK_THROWS_AS(scale_from_neighbors(pair, 2), DomainError);
  CHECK_THROWS_AS(scale_from_neighbors(pair, 0), DomainError);
}

TEST_CASE("densify a plane view") {
  harness::SceneSpec spec = test::single_view_spec(test::tilted_plane(test::deg(25)), 96);
  const auto scene = harness::make_scene(spec);
  const View& v = scene.views[0];
  DensifyConfig cfg;
  const auto batch = densify_from_depth(v, v.depth, v.depth.valid, scene.gt_normals[0], cfg);
  CHECK(batch.surfels.size() == 48 * 48);
  const Vec3 plane_n = spec.surface.normal;
  for (const Surfel& s : batch.surfels) {
    CHECK(std::abs(spec.surface.sdf(s.position)) < 1e-6);
    CHECK(std::acos(std::min(1.0, std::abs(s.normal.dot(plane_n)))) < 1e-3);
    CHECK((to_matrix(s.rotation) * Vec3::UnitZ() - s.normal).norm() < 1e-6);
    CHECK(s.opacity_logit == doctest::Approx(logit(0.1)));
    CHECK(s.scale.minCoeff() > 0.0);
  }
  CHECK_FALSE(find_invalid_surfel(batch.surfels));

  const auto empty = densify_from_depth(v, v.depth, Mask(96, 96, 0), scene.gt_normals[0], cfg);
  CHECK(empty.surfels.empty());

  NormalMap missing = scene.gt_normals[0];
  missing.valid(10, 10) = 0;
  const auto skipped = densify_from_depth(v, v.depth, v.depth.valid, missing, cfg);
  CHECK(skipped.skipped_no_normal == 1);
  CHECK(skipped.surfels.size() == 48 * 48 - 1);

  cfg.max_new_per_view = 100;
  CHECK(densify_from_depth(v, v.depth, v.depth.valid, scene.gt_normals[0], cfg).surfels.size() == 100);
}

TEST_CASE("adaptive densification on the sphere") {
  const auto scene = cap_sphere(128, 0.01);
  const SurfelCloud coarse = coarse_cloud(scene);
  DensifyParams params;
  DensifyState state;
  DensifyReport report;
  const SurfelCloud grown = adaptive_densify(coarse, scene.views, params, state, &report);
  MESSAGE("near " << report.new_near << " mid " << report.new_mid << " far " << report.new_far);
  CHECK(report.total_new() > 0);
  CHECK(grown.size() == coarse.size() + report.total_new());
  CHECK(report.new_near + report.new_far > report.new_mid);
  CHECK(state.processed_ids.size() == scene.views.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) CHECK(grown[i].position == coarse[i].position);
  CHECK_FALSE(find_invalid_surfel(grown));

  DensifyReport again;
  const SurfelCloud same = adaptive_densify(grown, scene.views, params, state, &again);
  CHECK(again.total_new() == 0);
  CHECK(same.size() == grown.size());
}

TEST_CASE("no primitive above an infinite threshold") {
  const auto scene = cap_sphere(64);
  DensifyParams params;
  params.densify.scale_threshold = std::numeric_limits<double>::infinity();
  DensifyState state;
  DensifyReport report;
  const SurfelCloud coarse = coarse_cloud(scene);
  const SurfelCloud out = adaptive_densify(coarse, scene.views, params, state, &report);
  CHECK(report.total_new() == 0);
  CHECK(out.size() == coarse.size());
}

TEST_CASE("too few views") {
  const auto scene = cap_sphere(32);
  std::vector<View> three(scene.views.begin(), scene.views.begin() + 3);
  DensifyState state;
  CHECK_THROWS_AS(adaptive_densify({}, three, DensifyParams{}, state), ConfigError);
}

TEST_CASE("footprint of large primitives") {
  const auto scene = cap_sphere(64);
  const View& v = scene.views[0];
  Surfel s;
  s.position = Vec3(0, 0, 4);
  s.scale = Vec2(0.1, 0.1);
  const Mask m = large_primitive_footprint({s}, v, 0.05);
  const auto p = project(s.position, v.intrinsics, v.pose);
  const double r = 0.1 * v.intrinsics.fx / p->depth;
  std::size_t inside = 0, expect = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      inside += m(x, y);
      expect += (x - p->u) * (x - p->u) + (y - p->v) * (y - p->v) <= r * r;
    }
  CHECK(inside == expect);
  CHECK(inside > 20);
  CHECK(large_primitive_footprint({s}, v, 0.2).data == Mask(64, 64, 0).data);
}
