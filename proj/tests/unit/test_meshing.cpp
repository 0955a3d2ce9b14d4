#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mvg/densify.hpp"
#include "mvg/marching_cubes.hpp"
#include "mvg/meshing.hpp"

using namespace mvg;
using meshing::MeshConfig;

namespace {

Surfel surfel_at(const Vec3& p, const Vec3& n, double scale) {
  Surfel s;
  s.position = p;
  s.normal = n.normalized();
  s.rotation = densify::rotation_from_normal(s.normal);
  s.scale = Vec2::Constant(scale);
  return s;
}

/// Square grid of surfels on the plane through c with normal n, spanned by u and v.
SurfelCloud plane_cloud(const Vec3& c, const Vec3& n, double half, double spacing) {
  const Vec3 u = n.unitOrthogonal(), v = n.cross(u).normalized();
  SurfelCloud out;
  const int m = static_cast<int>(std::lround(half / spacing));
  for (int j = -m; j <= m; ++j)
    for (int i = -m; i <= m; ++i) out.push_back(surfel_at(c + i * spacing * u + j * spacing * v, n, spacing));
  return out;
}

double plane_rms(const SurfelCloud& cloud, const Vec3& c, const Vec3& n) {
  double s = 0.0;
  for (const Surfel& p : cloud) s += std::pow(n.dot(p.position - c), 2);
  return std::sqrt(s / static_cast<double>(cloud.size()));
}

}  // namespace

TEST_CASE("mesh config validation") {
  MeshConfig c;
  CHECK_NOTHROW(c.validate());
  c.voxel_min = 0.004;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MeshConfig{};
  c.smooth_steps = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(MeshConfig{}.block_size() == doctest::Approx(0.096));
}

TEST_CASE("crop keeps exactly the points inside the box") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SurfelCloud cloud;
  for (int i = 0; i < 500; ++i) cloud.push_back(surfel_at(Vec3(u(rng), u(rng), u(rng)), Vec3::UnitZ(), 0.01));
  meshing::BBox box;
  box.hi.x() = 0.0;
  const SurfelCloud kept = meshing::crop(cloud, box);
  std::size_t expected = 0;
  for (const Surfel& s : cloud) expected += s.position.x() <= 0.0;
  CHECK(kept.size() == expected);
  for (const Surfel& s : kept) CHECK(s.position.x() <= 0.0);
}

TEST_CASE("floater removal keeps a uniform cloud and drops a distant point") {
  // Fibonacci lattice on a sphere: uniform density without a boundary.
  const int count = 2000;
  const double spacing = std::sqrt(4.0 * test::kPi / count);
  SurfelCloud cloud;
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count, r = std::sqrt(1.0 - z * z);
    const double phi = i * test::kPi * (3.0 - std::sqrt(5.0));
    const Vec3 p(r * std::cos(phi), r * std::sin(phi), z);
    cloud.push_back(surfel_at(p, p, spacing));
  }
  const SurfelCloud uniform = meshing::remove_floaters(cloud, 8, 2.0);
  CHECK(uniform.size() >= static_cast<std::size_t>(0.99 * cloud.size()));

  cloud.push_back(surfel_at(Vec3(0.0, 0.0, 1.0 + 100 * spacing), Vec3::UnitZ(), spacing));
  const SurfelCloud filtered = meshing::remove_floaters(cloud, 8, 2.0);
  for (const Surfel& s : filtered) CHECK(s.position.norm() < 1.5);

  MeshConfig cfg;
  cfg.bbox.hi = Vec3::Constant(-5.0);
  CHECK_THROWS_AS(meshing::crop_and_filter(cloud, cfg), EmptyCloudError);
  CHECK_THROWS_AS(meshing::crop_and_filter(SurfelCloud{}, MeshConfig{}), EmptyCloudError);
}

TEST_CASE("adaptive voxel sizes follow the cube-root density rule") {
  MeshConfig cfg;
  const double b = cfg.block_size();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  SurfelCloud cloud;
  auto fill = [&](int bx, int count) {
    for (int i = 0; i < count; ++i)
      cloud.push_back(surfel_at(b * Vec3(bx + u(rng), u(rng), u(rng)), Vec3::UnitZ(), 0.001));
  };
  for (int bx = 0; bx < 5; ++bx) fill(bx, 40);
  auto sizes = meshing::adaptive_voxel_sizes(cloud, cfg);
  REQUIRE(sizes.size() == 5);
  for (const auto& [key, v] : sizes) CHECK(v == cfg.base_voxel);

  fill(5, 320);
  fill(6, 40 * 64);
  sizes = meshing::adaptive_voxel_sizes(cloud, cfg);
  CHECK(sizes.at({5, 0, 0}) == doctest::Approx(cfg.base_voxel / 2).epsilon(1e-12));
  CHECK(sizes.at({6, 0, 0}) == cfg.voxel_min);  // base / 4 clamped
  for (const auto& [key, v] : sizes) {
    CHECK(v >= cfg.voxel_min);
    CHECK(v <= cfg.voxel_max);
  }
  CHECK(meshing::adaptive_voxel_sizes(cloud, cfg) == sizes);
}

TEST_CASE("occupancy of a single point peaks at its voxel") {
  const double b = 0.32;
  const int n = 16;
  const Vec3 p(0.1234, 0.2012, 0.0777);
  const SurfelCloud cloud{surfel_at(p, Vec3::UnitZ(), 0.02)};
  const auto f = meshing::occupancy_from_points(cloud, meshing::block_of(p, b), b, n, false);
  std::size_t best = 0;
  for (std::size_t i = 0; i < f.weight.values.size(); ++i) {
    CHECK(f.weight.values[i] >= 0.0);
    CHECK(f.weight.values[i] <= 1.0);
    CHECK(f.value.values[i] >= 0.0);
    CHECK(f.value.values[i] <= 1.0);
    if (f.weight.values[i] > f.weight.values[best]) best = i;
  }
  const int i = static_cast<int>(best % (n + 1)), j = static_cast<int>(best / (n + 1) % (n + 1)),
            k = static_cast<int>(best / ((n + 1) * (n + 1)));
  const Vec3 node = f.origin + f.voxel * Vec3(i, j, k);
  CHECK(((node - p).array().abs() <= 0.5 * f.voxel + 1e-12).all());
}

TEST_CASE("occupancy level set of a plane cloud lies within a voxel of the plane") {
  const double b = 0.32;
  const int n = 32;
  const Vec3 c(0.16, 0.16, 0.1537), nrm = Vec3(0.2, -0.1, 1.0).normalized();
  const SurfelCloud cloud = plane_cloud(c, nrm, 0.3, 0.005);
  for (bool smooth : {false, true}) {
    const auto f = meshing::occupancy_from_points(cloud, {0, 0, 0}, b, n, smooth);
    // The occupancy is defined where splats reach; elsewhere it reads 0.
    std::vector<std::uint8_t> active(f.weight.values.size());
    for (std::size_t i = 0; i < active.size(); ++i) active[i] = f.weight.values[i] >= 0.01;
    const TriangleMesh m = marching_cubes(f.value, 0.5, f.voxel, f.origin, &active);
    REQUIRE(!m.empty());
    std::size_t close = 0;
    for (const Vec3& v : m.vertices) close += std::abs(nrm.dot(v - c)) < f.voxel;
    CHECK(static_cast<double>(close) >= 0.95 * static_cast<double>(m.vertices.size()));
  }
}

TEST_CASE("multiview smoothing: exact plane is a fixed point, noise contracts") {
  const harness::Surface plane = harness::Surface::plane(Vec3(0, 0, 5), Vec3(0, 0, -1));
  const harness::SyntheticScene scene = harness::make_scene(test::single_view_spec(plane, 128));
  const Vec3 c(0, 0, 5), n(0, 0, -1);
  const SurfelCloud exact = plane_cloud(c, n, 0.5, 0.02);

  MeshConfig cfg;
  cfg.smooth_steps = 0;
  const SurfelCloud same = meshing::multiview_normal_smooth(exact, scene.views, scene.gt_normals, cfg);
  for (std::size_t i = 0; i < exact.size(); ++i) CHECK(same[i].position == exact[i].position);

  cfg.smooth_steps = 3;
  meshing::SmoothStats stats;
  const SurfelCloud fixed = meshing::multiview_normal_smooth(exact, scene.views, scene.gt_normals, cfg, &stats);
  CHECK(stats.invisible == 0);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    REQUIRE((fixed[i].position - exact[i].position).norm() < 1e-9);
    REQUIRE((fixed[i].normal - exact[i].normal).norm() < 1e-9);
  }

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> jitter(-0.004, 0.004);
  SurfelCloud noisy = exact;
  for (Surfel& s : noisy) s.position += jitter(rng) * n;
  cfg.smooth_steps = 1;
  double rms = plane_rms(noisy, c, n);
  for (int step = 0; step < 4; ++step) {
    noisy = meshing::multiview_normal_smooth(noisy, scene.views, scene.gt_normals, cfg);
    const double next = plane_rms(noisy, c, n);
    CHECK(next < rms);
    rms = next;
  }
}

TEST_CASE("multiview smoothing leaves points no view sees") {
  const harness::Surface plane = harness::Surface::plane(Vec3(0, 0, 5), Vec3(0, 0, -1));
  const harness::SyntheticScene scene = harness::make_scene(test::single_view_spec(plane, 64));
  SurfelCloud cloud = plane_cloud(Vec3(0, 0, 5), Vec3(0, 0, -1), 0.1, 0.02);
  for (Surfel& s : cloud) s.position += Vec3(50.0, 0.0, 0.0);
  MeshConfig cfg;
  meshing::SmoothStats stats;
  const SurfelCloud out = meshing::multiview_normal_smooth(cloud, scene.views, scene.gt_normals, cfg, &stats);
  CHECK(stats.invisible == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(out[i].position == cloud[i].position);
}

namespace {

SurfelCloud sphere_cloud(const Vec3& c, double r, int count) {
  const double spacing = r * std::sqrt(4.0 * test::kPi / count);
  SurfelCloud out;
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count, rho = std::sqrt(1.0 - z * z);
    const double phi = i * test::kPi * (3.0 - std::sqrt(5.0));
    const Vec3 d(rho * std::cos(phi), rho * std::sin(phi), z);
    out.push_back(surfel_at(c + r * d, d, spacing));
  }
  return out;
}

MeshConfig coarse_config(double base) {
  MeshConfig cfg;
  cfg.base_voxel = base;
  cfg.voxel_min = 0.005;
  cfg.voxel_max = 0.04;
  return cfg;
}

}  // namespace

TEST_CASE("extract_mesh: plane cloud gives a planar mesh inside the dilated box") {
  const Vec3 c(0.05, -0.02, 1.0), n = Vec3(0.1, 0.2, -1.0).normalized();
  const SurfelCloud cloud = plane_cloud(c, n, 0.25, 0.005);
  MeshConfig cfg = coarse_config(0.01);
  cfg.bbox.lo = Vec3(-0.15, -0.3, 0.0);
  cfg.bbox.hi = Vec3(0.3, 0.3, 2.0);
  meshing::MeshStats stats;
  const TriangleMesh m = meshing::extract_mesh(cloud, {}, {}, cfg, &stats);
  REQUIRE(!m.empty());
  CHECK(stats.kept_points < stats.input_points);
  CHECK(harness::planarity_rms(m, harness::Surface::plane(c, n)) < cfg.base_voxel);
  const meshing::BBox grown = cfg.bbox.dilated(cfg.voxel_max);
  for (const Vec3& v : m.vertices) REQUIRE(grown.contains(v));
  for (std::size_t t = 0; t < m.triangles.size(); ++t) REQUIRE(triangle_area(m, t) > 0.0);
  CHECK(euler_characteristic(m) == 1);

  const TriangleMesh coarse = meshing::extract_mesh(cloud, {}, {}, coarse_config(0.02));
  CHECK(coarse.triangles.size() < m.triangles.size());
}

TEST_CASE("extract_mesh: sphere cloud gives a closed mesh near the sphere") {
  const Vec3 c(0.01, 0.02, 1.0);
  const double r = 0.3;
  const SurfelCloud cloud = sphere_cloud(c, r, 40000);
  const MeshConfig cfg = coarse_config(0.01);
  meshing::MeshStats stats;
  const TriangleMesh m = meshing::extract_mesh(cloud, {}, {}, cfg, &stats);
  REQUIRE(!m.empty());
  CHECK(euler_characteristic(m) == 2);
  CHECK(boundary_edge_count(m) == 0);
  CHECK(harness::chamfer_distance(m, harness::Surface::sphere(c, r), 5000) < 2.0 * cfg.base_voxel);
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    const Vec3 a = m.vertices[tri[0]], b = m.vertices[tri[1]], d = m.vertices[tri[2]];
    REQUIRE((b - a).cross(d - a).dot((a + b + d) / 3.0 - c) > 0.0);
  }
  const TriangleMesh again = meshing::extract_mesh(cloud, {}, {}, cfg);
  CHECK(again.vertices == m.vertices);
  CHECK(again.triangles == m.triangles);
}

TEST_CASE("extract_mesh: mixed block resolutions stay closed across seams") {
  // Denser points on one hemisphere push its blocks to the finer voxel.
  const Vec3 c(0.0, 0.0, 1.0);
  const double r = 0.3;
  const SurfelCloud dense = sphere_cloud(c, r, 120000);
  SurfelCloud cloud;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i].position.x() > c.x() || i % 8 == 0) cloud.push_back(dense[i]);
  MeshConfig cfg = coarse_config(0.01);
  cfg.floater_sigma = 5.0;
  meshing::MeshStats stats;
  const TriangleMesh m = meshing::extract_mesh(cloud, {}, {}, cfg, &stats);
  CHECK(stats.blocks_per_voxel.size() >= 2);
  CHECK(boundary_edge_count(m) == 0);
  CHECK(euler_characteristic(m) == 2);
  CHECK(harness::chamfer_distance(m, harness::Surface::sphere(c, r), 5000) < 2.0 * cfg.base_voxel);
}
