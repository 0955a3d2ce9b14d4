#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "helpers.hpp"
#include "mvg/config.hpp"
#include "mvg/io.hpp"
#include "mvg/pipeline.hpp"

using namespace mvg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("mvg_unit_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config defaults carry the published constants") {
  const PipelineConfig c;
  CHECK(c.thresholds.near == consistency::Thresholds{1.0, 0.01, 3});
  CHECK(c.thresholds.mid == consistency::Thresholds{1.0, 0.001, 3});
  CHECK(c.thresholds.far == consistency::Thresholds{1.0, 0.01, 3});
  CHECK(c.densify.interval == 100);
  CHECK(c.mesh.base_voxel == 0.003);
  CHECK(c.mesh.voxel_min == 0.001);
  CHECK(c.mesh.voxel_max == 0.005);
  CHECK(c.kde.p_near == 0.15);
  CHECK(c.kde.p_far == 0.85);
  CHECK(!c.kde.bandwidth);
  CHECK(c.refine.pad_n == 1);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config text round-trips") {
  PipelineConfig c;
  c.refine.alpha = 7.25;
  c.kde.bandwidth = 0.0125;
  c.thresholds.mid.rel_depth_tol = 0.002;
  c.densify.stride = 3;
  c.mesh.bbox.lo = Vec3(-1, -2, -3);
  c.mesh.smooth_mesh = false;
  c.seed_stride = 4;
  const std::string text = to_toml(c);
  const PipelineConfig back = parse_config(text);
  CHECK(to_toml(back) == text);
  CHECK(back.refine.alpha == 7.25);
  CHECK(*back.kde.bandwidth == 0.0125);
  CHECK(back.thresholds.mid.rel_depth_tol == 0.002);
  CHECK(back.mesh.bbox.lo == Vec3(-1, -2, -3));
  CHECK(std::isinf(back.mesh.bbox.hi.x()));
  CHECK(!back.mesh.smooth_mesh);
  CHECK(back.seed_stride == 4);
}

TEST_CASE("config parsing keeps defaults, accepts comments and overrides") {
  const PipelineConfig c = parse_config("# comment\n[mesh]\nbase_voxel = 0.004 # trailing\n\n[refine]\nalpha = 3\n");
  CHECK(c.mesh.base_voxel == 0.004);
  CHECK(c.refine.alpha == 3.0);
  CHECK(c.mesh.voxel_min == 0.001);
  PipelineConfig o;
  apply_override(o, "consistency.far.min_views=2");
  CHECK(o.thresholds.far.min_views == 2);
  apply_override(o, "quantile.bandwidth=auto");
  CHECK(!o.kde.bandwidth);
  CHECK_THROWS_AS(apply_override(o, "mesh.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(o, "no_equals_sign"), ConfigError);
}

TEST_CASE("config errors name the origin and line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text, "cfg.toml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string unknown_key = message("[mesh]\n\nfoo = 1\n");
  CHECK(unknown_key.find("cfg.toml") != std::string::npos);
  CHECK(unknown_key.find('3') != std::string::npos);
  CHECK(!message("[nosuch]\n").empty());
  CHECK(!message("[mesh]\nbase_voxel = abc\n").empty());
  CHECK(!message("[mesh]\nsmooth_mesh = 2\n").empty());
  CHECK(!message("[densify]\nstride = 1.5\n").empty());
  CHECK(!message("alpha = 1\n").empty());
  CHECK(!message("[mesh]\nbase_voxel = 0.01\n").empty());  // above voxel_max
  CHECK(!message("[quantile]\np_near = 0.9\n").empty());
  CHECK(message("[mesh]\nbase_voxel = 0.004\n").empty());
  CHECK_THROWS_AS(load_config("/nonexistent/mvg.toml"), IoError);
}

TEST_CASE("depth and normal PFM round trip at float precision") {
  TempDir tmp("pfm");
  std::mt19937_64 rng(1);
  const DepthMap d = test::random_depth(17, 9, rng, 1.0, 3.0, 0.2);
  io::write_depth_pfm(tmp.path / "d.pfm", d);
  const DepthMap back = io::read_depth_pfm(tmp.path / "d.pfm");
  REQUIRE(back.width() == 17);
  REQUIRE(back.height() == 9);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 17; ++x) {
      REQUIRE(back.is_valid(x, y) == d.is_valid(x, y));
      if (d.is_valid(x, y)) REQUIRE(back(x, y) == static_cast<double>(static_cast<float>(d(x, y))));
    }

  const NormalMap n = test::random_normals(5, 7, rng);
  io::write_normals_pfm(tmp.path / "n.pfm", n);
  const NormalMap nb = io::read_normals_pfm(tmp.path / "n.pfm");
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 5; ++x) CHECK((nb(x, y) - n(x, y)).norm() < 1e-6);

  CHECK_THROWS_AS(io::read_depth_pfm(tmp.path / "missing.pfm"), IoError);
  std::ofstream(tmp.path / "bad.pfm") << "P5\n1 1\n-1\n";
  CHECK_THROWS_AS(io::read_depth_pfm(tmp.path / "bad.pfm"), IoError);
}

TEST_CASE("images and masks round trip at 8 bits") {
  TempDir tmp("png");
  std::mt19937_64 rng(2);
  const ImageBuffer img = test::random_image(13, 6, rng);
  for (const char* name : {"i.png", "i.ppm"}) {
    io::write_image(tmp.path / name, img);
    const ImageBuffer back = io::read_image(tmp.path / name);
    REQUIRE(back.width() == 13);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 13; ++x) CHECK((back(x, y) - img(x, y)).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
  }
  Mask m(7, 3, 0);
  m(1, 1) = 1;
  m(6, 2) = 1;
  io::write_mask_png(tmp.path / "m.png", m);
  const Mask mb = io::read_mask_png(tmp.path / "m.png");
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 7; ++x) CHECK(mb(x, y) == m(x, y));
}

TEST_CASE("camera JSON round trip is exact") {
  TempDir tmp("cam");
  std::mt19937_64 rng(3);
  io::CameraRecord cam;
  cam.id = 4;
  cam.intrinsics = intrinsics_from_fov(test::deg(41), test::deg(33), 97, 61);
  cam.pose = test::random_pose(rng);
  io::write_camera_json(tmp.path / "c.json", cam);
  const io::CameraRecord back = io::read_camera_json(tmp.path / "c.json");
  CHECK(back.id == 4);
  CHECK(back.intrinsics.fx == cam.intrinsics.fx);
  CHECK(back.intrinsics.cy == cam.intrinsics.cy);
  CHECK(back.intrinsics.width == 97);
  CHECK(back.pose.rotation == cam.pose.rotation);
  CHECK(back.pose.translation == cam.pose.translation);

  std::ofstream(tmp.path / "broken.json") << R"({"id": 1, "intrinsics": {"fx": 1}})";
  try {
    io::read_camera_json(tmp.path / "broken.json");
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("broken.json") != std::string::npos);
  }
}

TEST_CASE("surfel and mesh PLY round trips") {
  TempDir tmp("ply");
  std::mt19937_64 rng(5);
  SurfelCloud cloud(20);
  for (Surfel& s : cloud) {
    s.position = test::random_unit(rng) * 2.0;
    s.normal = test::random_unit(rng);
    s.rotation = Quat(Eigen::AngleAxisd(0.3, test::random_unit(rng)));
    s.scale = Vec2(0.01, 0.02);
    s.opacity_logit = -2.1972;
    s.sh0 = Vec3(0.1, -0.2, 0.3);
  }
  io::write_surfels_ply(tmp.path / "c.ply", cloud);
  const SurfelCloud back = io::read_surfels_ply(tmp.path / "c.ply");
  REQUIRE(back.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK((back[i].position - cloud[i].position).norm() < 1e-6);
    CHECK((back[i].normal - cloud[i].normal).norm() < 1e-6);
    CHECK(std::abs(back[i].rotation.w() - cloud[i].rotation.w()) < 1e-6);
    CHECK((back[i].scale - cloud[i].scale).norm() < 1e-8);
    CHECK(back[i].opacity_logit == doctest::Approx(cloud[i].opacity_logit).epsilon(1e-6));
  }

  // as_stored must agree bit for bit with the file, so meshing a written cloud is reproducible.
  const SurfelCloud stored = io::as_stored(cloud);
  REQUIRE(stored.size() == back.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(stored[i].position == back[i].position);
    CHECK(stored[i].normal == back[i].normal);
    CHECK(stored[i].rotation.coeffs() == back[i].rotation.coeffs());
    CHECK(stored[i].scale == back[i].scale);
    CHECK(stored[i].opacity_logit == back[i].opacity_logit);
    CHECK(stored[i].sh0 == back[i].sh0);
  }

  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.triangles = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  io::write_mesh_ply(tmp.path / "m.ply", m);
  const TriangleMesh mb = io::read_mesh_ply(tmp.path / "m.ply");
  CHECK(mb.vertices == m.vertices);
  CHECK(mb.triangles == m.triangles);
  io::write_mesh_obj(tmp.path / "m.obj", m);
  const std::string obj = slurp(tmp.path / "m.obj");
  CHECK(obj.find("f 1 3 2") != std::string::npos);
}

TEST_CASE("scene directories round trip") {
  TempDir tmp("scene");
  harness::SceneSpec spec;
  spec.surface = harness::Surface::sphere(Vec3(0, 0, 5), 1.0);
  spec.rig.views = 3;
  spec.rig.width = spec.rig.height = 32;
  const auto scene = harness::make_scene(spec);
  pipeline::save_scene(tmp.path, scene);
  CHECK(fs::exists(tmp.path / "cameras" / (pipeline::view_stem(0) + ".json")));
  const pipeline::SceneData back = pipeline::load_scene(tmp.path);
  REQUIRE(back.views.size() == 3);
  REQUIRE(back.surface);
  CHECK(back.surface->radius == 1.0);
  CHECK(back.gt_normals.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.views[i].pose.rotation == scene.views[i].pose.rotation);
    const DepthMap& a = scene.views[i].depth;
    const DepthMap& b = back.views[i].depth;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        REQUIRE(a.is_valid(x, y) == b.is_valid(x, y));
        if (a.is_valid(x, y)) REQUIRE(std::abs(a(x, y) - b(x, y)) < 1e-6);
      }
  }

  fs::remove(tmp.path / "cameras" / (pipeline::view_stem(1) + ".json"));
  try {
    pipeline::load_scene(tmp.path);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(pipeline::view_stem(1)) != std::string::npos);
  }
}

TEST_CASE("erosion keeps pixels whose whole window is set") {
  Mask m(6, 5, 1);
  m(0, 2) = 0;
  const Mask e = pipeline::erode(m, 1);
  CHECK(!e(0, 0));
  CHECK(!e(1, 2));
  CHECK(!e(1, 1));
  CHECK(e(2, 2));
  CHECK(e(4, 3));
  CHECK(!e(5, 3));
  CHECK(pipeline::erode(m, 0)(1, 2));
}
