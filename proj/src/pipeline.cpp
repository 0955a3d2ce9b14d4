#include "mvg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "mvg/io.hpp"

namespace mvg::pipeline {

using nlohmann::json;

std::string view_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", id);
  return buf;
}

json surface_to_json(const harness::Surface& s) {
  json j;
  j["shape"] = s.shape == harness::Shape::Plane ? "plane" : "sphere";
  j["point"] = {s.point.x(), s.point.y(), s.point.z()};
  j["normal"] = {s.normal.x(), s.normal.y(), s.normal.z()};
  j["radius"] = s.radius;
  return j;
}

harness::Surface surface_from_json(const json& j) {
  const auto vec = [&](const char* key) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) throw ConfigError(std::string(key) + " must have 3 numbers");
    return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  const std::string shape = j.at("shape").get<std::string>();
  if (shape == "plane") return harness::Surface::plane(vec("point"), vec("normal"));
  if (shape == "sphere") return harness::Surface::sphere(vec("point"), j.at("radius").get<double>());
  throw ConfigError("shape must be plane or sphere, got '" + shape + "'");
}

SceneData load_scene(const fs::path& dir) {
  const fs::path cams = dir / "cameras";
  if (!fs::is_directory(cams)) throw IoError(cams.string(), "missing cameras directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cams))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(cams.string(), "no camera files");
  if (fs::is_directory(dir / "depth"))
    for (const auto& e : fs::directory_iterator(dir / "depth")) {
      if (e.path().extension() != ".pfm") continue;
      const fs::path cam = cams / (e.path().stem().string() + ".json");
      if (!fs::exists(cam)) throw IoError(cam.string(), "missing camera file for " + e.path().filename().string());
    }

  SceneData scene;
  for (const fs::path& cam_path : files) {
    const std::string stem = cam_path.stem().string();
    const io::CameraRecord cam = io::read_camera_json(cam_path);
    View v;
    v.id = cam.id;
    v.intrinsics = cam.intrinsics;
    v.pose = cam.pose;
    const fs::path depth_path = dir / "depth" / (stem + ".pfm");
    const fs::path image_path = dir / "images" / (stem + ".png");
    if (!fs::exists(depth_path)) throw IoError(depth_path.string(), "missing depth map");
    if (!fs::exists(image_path)) throw IoError(image_path.string(), "missing image");
    v.depth = io::read_depth_pfm(depth_path);
    v.image = io::read_image(image_path);
    if (v.depth.width() != v.intrinsics.width || v.depth.height() != v.intrinsics.height)
      throw IoError(depth_path.string(), "size does not match camera width/height");
    if (v.image.width() != v.intrinsics.width || v.image.height() != v.intrinsics.height)
      throw IoError(image_path.string(), "size does not match camera width/height");
    try {
      v.validate();
    } catch (const ConfigError& e) {
      throw IoError(cam_path.string(), e.what());
    }
    const fs::path gt_path = dir / "gt_normals" / (stem + ".pfm");
    if (fs::exists(gt_path)) {
      NormalMap gt = io::read_normals_pfm(gt_path);
      if (gt.width() != v.intrinsics.width || gt.height() != v.intrinsics.height)
        throw IoError(gt_path.string(), "size does not match camera width/height");
      scene.gt_normals[v.id] = std::move(gt);
    }
    scene.views.push_back(std::move(v));
  }
  std::sort(scene.views.begin(), scene.views.end(),
            [](const View& a, const View& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < scene.views.size(); ++i)
    if (scene.views[i].id == scene.views[i - 1].id)
      throw IoError(cams.string(), "duplicate camera id " + std::to_string(scene.views[i].id));

  const fs::path meta = dir / "scene.json";
  if (fs::exists(meta)) {
    std::ifstream in(meta);
    try {
      const json j = json::parse(in);
      if (j.contains("surface")) scene.surface = surface_from_json(j.at("surface"));
    } catch (const std::exception& e) {
      throw IoError(meta.string(), std::string("surface: ") + e.what());
    }
  }
  return scene;
}

void save_scene(const fs::path& dir, const harness::SyntheticScene& scene) {
  for (const char* sub : {"cameras", "depth", "images", "gt_normals"})
    fs::create_directories(dir / sub);
  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    const View& v = scene.views[i];
    const std::string stem = view_stem(v.id);
    io::write_camera_json(dir / "cameras" / (stem + ".json"), {v.id, v.intrinsics, v.pose});
    io::write_depth_pfm(dir / "depth" / (stem + ".pfm"), v.depth);
    io::write_image(dir / "images" / (stem + ".png"), v.image);
    io::write_normals_pfm(dir / "gt_normals" / (stem + ".pfm"), scene.gt_normals[i]);
  }
  const auto& spec = scene.spec;
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["surface"] = surface_to_json(spec.surface);
  j["views"] = spec.rig.views;
  j["width"] = spec.rig.width;
  j["height"] = spec.rig.height;
  j["layout"] = spec.rig.layout == harness::RigLayout::Cap ? "cap" : "surround";
  j["noise"] = spec.noise;
  j["noise_kind"] = spec.noise_kind == harness::NoiseKind::Gaussian ? "gaussian" : "uniform";
  j["seed"] = spec.seed;
  std::ofstream out(dir / "scene.json");
  if (!out) throw IoError((dir / "scene.json").string(), "cannot write");
  out << j.dump(2) << '\n';
}

Mask erode(const Mask& m, int r) {
  Mask out(m.width, m.height, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool keep = m(x, y) != 0;
      for (int j = -r; j <= r && keep; ++j)
        for (int i = -r; i <= r && keep; ++i)
          keep = m.contains(x + i, y + j) && m(x + i, y + j) != 0;
      out(x, y) = keep ? 1 : 0;
    }
  return out;
}

SurfelCloud seed_cloud(const std::vector<View>& views, const std::map<int, NormalMap>& normals,
                       const densify::DensifyConfig& cfg, int stride) {
  densify::DensifyConfig seed_cfg = cfg;
  seed_cfg.stride = stride;
  seed_cfg.max_new_per_view = static_cast<std::size_t>(-1);
  SurfelCloud cloud;
  for (const View& v : views) {
    // Silhouette pixels have one-sided normal stencils; keep the interior only.
    const Mask interior = erode(v.depth.valid, kSeedMargin);
    const auto batch = densify::densify_from_depth(v, v.depth, interior, normals.at(v.id), seed_cfg);
    cloud.insert(cloud.end(), batch.surfels.begin(), batch.surfels.end());
  }
  return cloud;
}

json mesh_metrics(const TriangleMesh& mesh, const std::optional<harness::Surface>& s) {
  json j;
  j["vertices"] = mesh.vertices.size();
  j["triangles"] = mesh.triangles.size();
  j["euler_characteristic"] = euler_characteristic(mesh);
  j["boundary_edges"] = boundary_edge_count(mesh);
  if (s && !mesh.triangles.empty()) {
    const auto parts = harness::chamfer_parts(mesh, *s, 20000, 1);
    j["chamfer"] = 0.5 * (parts.mesh_to_surface + parts.surface_to_mesh);
    j["chamfer_mesh_to_surface"] = parts.mesh_to_surface;
    j["chamfer_surface_to_mesh"] = parts.surface_to_mesh;
    if (s->shape == harness::Shape::Plane) j["planarity_rms"] = harness::planarity_rms(mesh, *s);
  }
  return j;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void check_mesh(const TriangleMesh& mesh) {
  for (const auto& t : mesh.triangles)
    for (std::uint32_t i : t)
      if (i >= mesh.vertices.size())
        throw InvariantViolation("mesh: triangle index " + std::to_string(i) + " out of range");
  for (const Vec3& v : mesh.vertices)
    if (!v.allFinite()) throw InvariantViolation("mesh: non-finite vertex");
}

}  // namespace

PipelineResult run_pipeline(const SceneData& scene, const PipelineConfig& cfg,
                            const fs::path& out_dir, const SurfelCloud* initial) {
  cfg.validate();
  if (scene.views.empty()) throw ConfigError("pipeline: scene has no views");
  const auto start = Clock::now();
  json timings;

  auto t = Clock::now();
  std::map<int, densify::RefinedView> refined;
  for (const View& v : scene.views) refined[v.id] = densify::refine_view(v, cfg.refine);
  std::vector<View> refined_views = scene.views;
  std::map<int, NormalMap> normals;
  for (View& v : refined_views) {
    v.depth = refined.at(v.id).depth;
    normals[v.id] = refined.at(v.id).normals;
  }
  timings["refine"] = seconds_since(t);

  t = Clock::now();
  const SurfelCloud seed =
      initial ? *initial : seed_cloud(refined_views, normals, cfg.densify, cfg.seed_stride);
  timings["seed"] = seconds_since(t);

  t = Clock::now();
  const densify::DensifyParams params{cfg.kde, cfg.thresholds, cfg.densify, cfg.refine};
  densify::DensifyState state;
  densify::DensifyReport dreport;
  SurfelCloud cloud = densify::adaptive_densify(seed, scene.views, params, state, &dreport);
  timings["densify"] = seconds_since(t);
  if (const auto bad = find_invalid_surfel(cloud))
    throw InvariantViolation("densify: surfel " + std::to_string(*bad) + " violates its invariants");

  t = Clock::now();
  std::vector<NormalMap> normal_maps;
  for (const View& v : refined_views) normal_maps.push_back(normals.at(v.id));
  meshing::MeshStats mstats;
  // Meshed at stored precision so meshing cloud.ply alone reproduces mesh.ply.
  TriangleMesh mesh = meshing::extract_mesh(io::as_stored(cloud), refined_views, normal_maps, cfg.mesh, &mstats);
  timings["mesh"] = seconds_since(t);
  check_mesh(mesh);

  json report;
  report["schema_version"] = kReportSchemaVersion;
  json views = json::array();
  for (const auto& vr : dreport.views) {
    json j;
    j["id"] = vr.id;
    j["processed"] = vr.processed;
    if (!vr.error.empty()) j["error"] = vr.error;
    j["q_near"] = vr.q_near;
    j["q_far"] = vr.q_far;
    j["new_near"] = vr.new_near;
    j["new_mid"] = vr.new_mid;
    j["new_far"] = vr.new_far;
    j["rejected"] = vr.rejected;
    j["reset"] = vr.reset;
    j["skipped_no_normal"] = vr.skipped_no_normal;
    if (const auto gt = scene.gt_normals.find(vr.id); gt != scene.gt_normals.end()) {
      const auto err = harness::angular_error(normals.at(vr.id), gt->second);
      j["normal_error_mean_deg"] = err.mean_deg;
      j["normal_error_median_deg"] = err.median_deg;
    }
    views.push_back(j);
  }
  report["views"] = views;

  json counts;
  counts["seed_surfels"] = seed.size();
  counts["new_near"] = dreport.new_near;
  counts["new_mid"] = dreport.new_mid;
  counts["new_far"] = dreport.new_far;
  counts["surfels"] = cloud.size();
  counts["mesh_input_points"] = mstats.input_points;
  counts["mesh_kept_points"] = mstats.kept_points;
  counts["mesh_invisible_points"] = mstats.invisible_points;
  counts["mesh_blocks"] = mstats.blocks;
  json per_voxel = json::object();
  for (const auto& [voxel, n] : mstats.blocks_per_voxel) per_voxel[std::to_string(voxel)] = n;
  counts["mesh_blocks_per_voxel"] = per_voxel;
  counts["mesh_welded"] = mstats.welded;
  counts["mesh_degenerate_removed"] = mstats.degenerate_removed;
  counts["mesh_slivers_filled"] = mstats.slivers_filled;
  report["counts"] = counts;
  report["metrics"] = mesh_metrics(mesh, scene.surface);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir / "refined");
    fs::create_directories(out_dir / "normals");
    fs::create_directories(out_dir / "masks");
    for (const View& v : refined_views) {
      const std::string stem = view_stem(v.id);
      io::write_depth_pfm(out_dir / "refined" / (stem + ".pfm"), v.depth);
      io::write_normals_pfm(out_dir / "normals" / (stem + ".pfm"), normals.at(v.id));
    }
    for (const auto& [id, mask] : dreport.masks)
      io::write_mask_png(out_dir / "masks" / (view_stem(id) + ".png"), mask);
    io::write_surfels_ply(out_dir / "cloud.ply", cloud);
    io::write_mesh_ply(out_dir / "mesh.ply", mesh);
  }
  timings["total"] = seconds_since(start);
  report["timings_s"] = timings;
  if (!out_dir.empty()) {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw IoError((out_dir / "report.json").string(), "cannot write");
    out << report.dump(2) << '\n';
  }
  return {std::move(cloud), std::move(mesh), std::move(report)};
}

}  // namespace mvg::pipeline
