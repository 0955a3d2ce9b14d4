// mvg: command-line front end over the library. Exit codes: 0 success,
// 2 bad arguments or input files, 3 internal failure.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvg/config.hpp"
#include "mvg/consistency.hpp"
#include "mvg/densify.hpp"
#include "mvg/harness.hpp"
#include "mvg/io.hpp"
#include "mvg/meshing.hpp"
#include "mvg/parallel.hpp"
#include "mvg/pipeline.hpp"
#include "mvg/quantile.hpp"
#include "mvg/refine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvg;

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("MVG_LOG");
    const std::string s = env ? env : "";
    if (s == "error" || s == "0") return Level::Error;
    if (s == "info" || s == "2") return Level::Info;
    if (s == "debug" || s == "3") return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "mvg: " << names[static_cast<int>(level)] << ": " << msg << '\n';
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write");
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string(), e.what());
  }
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

/// Optional flag values that override config fields when given.
struct Overrides {
  std::optional<double> sigma_spatial, sigma_range, alpha;
  std::optional<double> p_near, p_far;
  std::optional<double> scale_threshold;
  std::optional<int> stride;
  std::optional<double> base_voxel, voxel_min, voxel_max;
  std::optional<int> steps;
  bool no_smooth = false;

  void apply(PipelineConfig& c) const {
    if (sigma_spatial) c.refine.sigma_spatial = *sigma_spatial;
    if (sigma_range) c.refine.sigma_range = *sigma_range;
    if (alpha) c.refine.alpha = *alpha;
    if (p_near) c.kde.p_near = *p_near;
    if (p_far) c.kde.p_far = *p_far;
    if (scale_threshold) c.densify.scale_threshold = *scale_threshold;
    if (stride) c.densify.stride = *stride;
    if (base_voxel) c.mesh.base_voxel = *base_voxel;
    if (voxel_min) c.mesh.voxel_min = *voxel_min;
    if (voxel_max) c.mesh.voxel_max = *voxel_max;
    if (steps) c.mesh.smooth_steps = *steps;
    if (no_smooth) c.mesh.smooth_mesh = false;
  }
};

struct Globals {
  unsigned threads = 0;
  std::string config_path;
  std::vector<std::string> sets;
  bool dump_config = false;
};

/// defaults <- --config <- --set <- subcommand flags, then validated.
PipelineConfig resolve_config(const Globals& g, const Overrides& o) {
  PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : load_config(g.config_path);
  for (const auto& s : g.sets) apply_override(cfg, s);
  o.apply(cfg);
  cfg.validate();
  return cfg;
}

View load_single_view(const fs::path& depth_path, const fs::path& image_path,
                      const fs::path& camera_path) {
  const io::CameraRecord cam = io::read_camera_json(camera_path);
  View v;
  v.id = cam.id;
  v.intrinsics = cam.intrinsics;
  v.pose = cam.pose;
  v.depth = io::read_depth_pfm(depth_path);
  v.image = io::read_image(image_path);
  if (v.depth.width() != cam.intrinsics.width || v.depth.height() != cam.intrinsics.height)
    throw IoError(depth_path.string(), "size does not match camera width/height");
  if (v.image.width() != cam.intrinsics.width || v.image.height() != cam.intrinsics.height)
    throw IoError(image_path.string(), "size does not match camera width/height");
  try {
    v.validate();
  } catch (const ConfigError& e) {
    throw IoError(camera_path.string(), e.what());
  }
  return v;
}

/// Rebuilds region masks of `depth` from stored quantiles.
quantile::DepthSegmentation segmentation_from_json(const json& j, const DepthMap& depth,
                                                    const fs::path& origin) {
  quantile::DepthSegmentation seg;
  try {
    seg.q_near = j.at("q_near").get<double>();
    seg.q_far = j.at("q_far").get<double>();
    seg.bandwidth = j.value("bandwidth", 0.0);
    seg.degenerate = j.value("degenerate", false);
  } catch (const json::exception& e) {
    throw IoError(origin.string(), e.what());
  }
  const int w = depth.width(), h = depth.height();
  seg.near_mask = seg.mid_mask = seg.far_mask = Mask(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!depth.is_valid(x, y)) continue;
      const double d = depth(x, y);
      if (seg.degenerate) {
        seg.mid_mask(x, y) = 1;
      } else if (d <= seg.q_near) {
        seg.near_mask(x, y) = 1;
      } else if (d >= seg.q_far) {
        seg.far_mask(x, y) = 1;
      } else {
        seg.mid_mask(x, y) = 1;
      }
    }
  return seg;
}

json segmentation_report(const quantile::DepthSegmentation& seg, const quantile::KdeConfig& kde) {
  json j;
  j["schema_version"] = pipeline::kReportSchemaVersion;
  j["q_near"] = seg.q_near;
  j["q_far"] = seg.q_far;
  j["bandwidth"] = seg.bandwidth;
  j["grid_size"] = kde.grid_size;
  j["degenerate"] = seg.degenerate;
  return j;
}

std::size_t count_set(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth refinement, densification and meshing for surfel scenes"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Globals g;
  Overrides o;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", g.config_path, "Config file ([section] key = value)");
  app.add_option("--set", g.sets, "Override a config key: section.key=value");
  app.add_flag("--dump-config", g.dump_config, "Print the resolved config and exit");

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic plane or sphere scene");
  std::string shape = "sphere", layout = "cap", synth_out, noise_kind = "gaussian";
  int views = 6, size = 256;
  double noise = 0.0, tilt_deg = 30.0, radius = 1.0, fov_deg = 30.0;
  std::uint64_t seed = 0;
  synth->add_option("--shape", shape)->check(CLI::IsMember({"sphere", "plane"}));
  synth->add_option("--layout", layout)->check(CLI::IsMember({"cap", "surround"}));
  synth->add_option("--views", views)->check(CLI::Range(1, 64));
  synth->add_option("--size", size)->check(CLI::Range(8, 8192));
  synth->add_option("--noise", noise, "Relative depth noise")->check(CLI::Range(0.0, 0.5));
  synth->add_option("--noise-kind", noise_kind)->check(CLI::IsMember({"gaussian", "uniform"}));
  synth->add_option("--seed", seed);
  synth->add_option("--tilt", tilt_deg, "Plane tilt from fronto-parallel, degrees")->check(CLI::Range(0.0, 80.0));
  synth->add_option("--radius", radius, "Sphere radius")->check(CLI::PositiveNumber);
  synth->add_option("--fov", fov_deg, "Field of view, degrees")->check(CLI::Range(1.0, 170.0));
  synth->add_option("--out", synth_out)->required();

  // refine
  auto* refine_cmd = app.add_subcommand("refine", "Refine one depth map");
  std::string r_depth, r_image, r_camera, r_out, r_normals;
  refine_cmd->add_option("--depth", r_depth)->required()->check(CLI::ExistingFile);
  refine_cmd->add_option("--image", r_image)->required()->check(CLI::ExistingFile);
  refine_cmd->add_option("--camera", r_camera)->required()->check(CLI::ExistingFile);
  refine_cmd->add_option("--out", r_out)->required();
  refine_cmd->add_option("--normals-out", r_normals);
  refine_cmd->add_option("--sigma-spatial", o.sigma_spatial);
  refine_cmd->add_option("--sigma-range", o.sigma_range);
  refine_cmd->add_option("--alpha", o.alpha);

  // segment
  auto* segment_cmd = app.add_subcommand("segment", "Split a depth map into near, mid and far");
  std::string s_depth, s_prefix;
  segment_cmd->add_option("--depth", s_depth)->required()->check(CLI::ExistingFile);
  segment_cmd->add_option("--out-prefix", s_prefix)->required();
  segment_cmd->add_option("--p-near", o.p_near);
  segment_cmd->add_option("--p-far", o.p_far);

  // consistency
  auto* cons_cmd = app.add_subcommand("consistency", "Multi-view geometric consistency mask");
  int c_ref = 0;
  std::string c_views, c_seg, c_out, c_report;
  cons_cmd->add_option("--ref", c_ref, "Reference view id")->required();
  cons_cmd->add_option("--views", c_views, "Scene directory")->required();
  cons_cmd->add_option("--seg", c_seg, "Segmentation report from `segment`");
  cons_cmd->add_option("--out", c_out)->required();
  cons_cmd->add_option("--report", c_report);

  // densify
  auto* dens_cmd = app.add_subcommand("densify", "Depth-projection densification of a surfel cloud");
  std::string d_scene, d_cloud, d_out, d_report;
  int d_iterations = -1;
  dens_cmd->add_option("--scene", d_scene)->required();
  dens_cmd->add_option("--cloud", d_cloud, "Input cloud; a seed cloud is built when omitted")
      ->check(CLI::ExistingFile);
  dens_cmd->add_option("--out", d_out)->required();
  dens_cmd->add_option("--report", d_report);
  dens_cmd->add_option("--iterations", d_iterations,
                       "Iterations to simulate; densification fires every interval (default: one interval)")
      ->check(CLI::NonNegativeNumber);
  dens_cmd->add_option("--scale-threshold", o.scale_threshold);
  dens_cmd->add_option("--stride", o.stride);
  dens_cmd->add_option("--p-near", o.p_near);
  dens_cmd->add_option("--p-far", o.p_far);

  // mesh
  auto* mesh_cmd = app.add_subcommand("mesh", "Extract a mesh from a surfel cloud");
  std::string m_cloud, m_views, m_out;
  mesh_cmd->add_option("--cloud", m_cloud)->required()->check(CLI::ExistingFile);
  mesh_cmd->add_option("--views", m_views, "Scene directory for multi-view normal smoothing");
  mesh_cmd->add_option("--out", m_out, "Output .ply or .obj")->required();
  mesh_cmd->add_option("--base-voxel", o.base_voxel);
  mesh_cmd->add_option("--voxel-min", o.voxel_min);
  mesh_cmd->add_option("--voxel-max", o.voxel_max);
  mesh_cmd->add_option("--steps", o.steps);
  mesh_cmd->add_flag("--no-smooth", o.no_smooth, "Disable voxel field smoothing");

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "refine, segment, consistency, densify and mesh");
  std::string p_scene, p_out, p_cloud;
  pipe_cmd->add_option("--scene", p_scene)->required();
  pipe_cmd->add_option("--out", p_out)->required();
  pipe_cmd->add_option("--cloud", p_cloud, "Initial cloud; a seed cloud is built when omitted")
      ->check(CLI::ExistingFile);

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Mesh and normal error metrics");
  std::string x_mesh, x_scene, x_normals, x_gt, x_report;
  metrics_cmd->add_option("--mesh", x_mesh)->check(CLI::ExistingFile);
  metrics_cmd->add_option("--scene", x_scene, "Scene directory holding scene.json");
  metrics_cmd->add_option("--normals", x_normals, "Estimated normal map")->check(CLI::ExistingFile);
  metrics_cmd->add_option("--gt", x_gt, "Ground-truth normal map")->check(CLI::ExistingFile);
  metrics_cmd->add_option("--report", x_report, "Write JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    set_thread_count(g.threads);
    const PipelineConfig cfg = resolve_config(g, o);
    if (g.dump_config) {
      std::cout << to_toml(cfg);
      return 0;
    }

    if (*synth) {
      harness::SceneSpec spec;
      spec.rig.views = views;
      spec.rig.width = spec.rig.height = size;
      spec.rig.fov = fov_deg * std::numbers::pi / 180.0;
      spec.rig.layout = layout == "cap" ? harness::RigLayout::Cap : harness::RigLayout::Surround;
      spec.noise = noise;
      spec.noise_kind = noise_kind == "gaussian" ? harness::NoiseKind::Gaussian : harness::NoiseKind::Uniform;
      spec.seed = seed;
      if (shape == "plane") {
        const double t = tilt_deg * std::numbers::pi / 180.0;
        spec.surface = harness::Surface::plane(spec.rig.target, Vec3(0.0, std::sin(t), -std::cos(t)));
      } else {
        spec.surface = harness::Surface::sphere(spec.rig.target, radius);
      }
      const auto scene = harness::make_scene(spec);
      pipeline::save_scene(synth_out, scene);
      log(Level::Info, "wrote " + std::to_string(scene.views.size()) + " views to " + synth_out);
    } else if (*refine_cmd) {
      const View v = load_single_view(r_depth, r_image, r_camera);
      const auto refined = densify::refine_view(v, cfg.refine);
      ensure_parent(r_out);
      io::write_depth_pfm(r_out, refined.depth);
      if (!r_normals.empty()) {
        ensure_parent(r_normals);
        io::write_normals_pfm(r_normals, refined.normals);
      }
    } else if (*segment_cmd) {
      const DepthMap depth = io::read_depth_pfm(s_depth);
      const auto seg = quantile::segment_depth(depth, cfg.kde);
      ensure_parent(s_prefix + "_near.png");
      io::write_mask_png(s_prefix + "_near.png", seg.near_mask);
      io::write_mask_png(s_prefix + "_mid.png", seg.mid_mask);
      io::write_mask_png(s_prefix + "_far.png", seg.far_mask);
      write_json(s_prefix + ".json", segmentation_report(seg, cfg.kde));
    } else if (*cons_cmd) {
      const auto scene = pipeline::load_scene(c_views);
      const View* ref = nullptr;
      for (const View& v : scene.views)
        if (v.id == c_ref) ref = &v;
      if (!ref) throw ConfigError("--ref " + std::to_string(c_ref) + ": no such view in " + c_views);
      const auto seg = c_seg.empty() ? quantile::segment_depth(ref->depth, cfg.kde)
                                     : segmentation_from_json(read_json(c_seg), ref->depth, c_seg);
      const auto srcs = consistency::select_sources(scene.views, *ref);
      const auto res = consistency::consistency_mask(*ref, srcs, seg, cfg.thresholds);
      ensure_parent(c_out);
      io::write_mask_png(c_out, res.mask);
      if (!c_report.empty()) {
        json j;
        j["schema_version"] = pipeline::kReportSchemaVersion;
        j["ref"] = c_ref;
        json ids = json::array();
        for (const View* s : srcs) ids.push_back(s->id);
        j["sources"] = ids;
        j["valid"] = ref->depth.valid_count();
        j["passed"] = {{"near", res.passed_near}, {"mid", res.passed_mid}, {"far", res.passed_far}};
        j["region_pixels"] = {{"near", count_set(seg.near_mask)},
                              {"mid", count_set(seg.mid_mask)},
                              {"far", count_set(seg.far_mask)}};
        std::vector<std::size_t> votes(srcs.size() + 1, 0), abstain(srcs.size() + 1, 0);
        for (std::size_t p = 0; p < res.votes.size(); ++p) {
          if (!ref->depth.valid.data[p]) continue;
          ++votes[res.votes.data[p]];
          ++abstain[res.abstain.data[p]];
        }
        j["vote_histogram"] = votes;
        j["abstain_histogram"] = abstain;
        write_json(c_report, j);
      }
    } else if (*dens_cmd) {
      const auto scene = pipeline::load_scene(d_scene);
      SurfelCloud cloud;
      if (!d_cloud.empty()) {
        cloud = io::read_surfels_ply(d_cloud);
      } else {
        std::vector<View> refined_views = scene.views;
        std::map<int, NormalMap> normals;
        for (View& v : refined_views) {
          auto r = densify::refine_view(v, cfg.refine);
          v.depth = std::move(r.depth);
          normals[v.id] = std::move(r.normals);
        }
        cloud = pipeline::seed_cloud(refined_views, normals, cfg.densify, cfg.seed_stride);
      }
      const int iterations = d_iterations < 0 ? cfg.densify.interval : d_iterations;
      const densify::DensifyParams params{cfg.kde, cfg.thresholds, cfg.densify, cfg.refine};
      densify::DensifyState state;
      json events = json::array();
      for (int it = 1; it <= iterations; ++it) {
        if (it % cfg.densify.interval != 0) continue;
        densify::DensifyReport rep;
        cloud = densify::adaptive_densify(cloud, scene.views, params, state, &rep);
        json e;
        e["iteration"] = it;
        e["new_near"] = rep.new_near;
        e["new_mid"] = rep.new_mid;
        e["new_far"] = rep.new_far;
        json vs = json::array();
        for (const auto& vr : rep.views) {
          json v;
          v["id"] = vr.id;
          v["processed"] = vr.processed;
          if (!vr.error.empty()) v["error"] = vr.error;
          v["q_near"] = vr.q_near;
          v["q_far"] = vr.q_far;
          v["new_near"] = vr.new_near;
          v["new_mid"] = vr.new_mid;
          v["new_far"] = vr.new_far;
          v["rejected"] = vr.rejected;
          v["reset"] = vr.reset;
          vs.push_back(v);
        }
        e["views"] = vs;
        events.push_back(e);
      }
      if (const auto bad = find_invalid_surfel(cloud))
        throw pipeline::InvariantViolation("densify: surfel " + std::to_string(*bad) + " is invalid");
      ensure_parent(d_out);
      io::write_surfels_ply(d_out, cloud);
      if (!d_report.empty()) {
        json j;
        j["schema_version"] = pipeline::kReportSchemaVersion;
        j["surfels"] = cloud.size();
        j["events"] = events;
        write_json(d_report, j);
      }
    } else if (*mesh_cmd) {
      const SurfelCloud cloud = io::read_surfels_ply(m_cloud);
      std::vector<View> views_for_mesh;
      std::vector<NormalMap> normal_maps;
      if (!m_views.empty()) {
        const auto scene = pipeline::load_scene(m_views);
        for (const View& v : scene.views) {
          auto r = densify::refine_view(v, cfg.refine);
          View rv = v;
          rv.depth = std::move(r.depth);
          views_for_mesh.push_back(std::move(rv));
          normal_maps.push_back(std::move(r.normals));
        }
      }
      meshing::MeshStats stats;
      const TriangleMesh mesh = meshing::extract_mesh(cloud, views_for_mesh, normal_maps, cfg.mesh, &stats);
      ensure_parent(m_out);
      if (fs::path(m_out).extension() == ".obj") {
        io::write_mesh_obj(m_out, mesh);
      } else {
        io::write_mesh_ply(m_out, mesh);
      }
      log(Level::Info, std::to_string(mesh.vertices.size()) + " vertices, " +
                           std::to_string(mesh.triangles.size()) + " triangles");
    } else if (*pipe_cmd) {
      const auto scene = pipeline::load_scene(p_scene);
      SurfelCloud initial;
      if (!p_cloud.empty()) initial = io::read_surfels_ply(p_cloud);
      const auto result =
          pipeline::run_pipeline(scene, cfg, p_out, p_cloud.empty() ? nullptr : &initial);
      log(Level::Info, "report: " + (fs::path(p_out) / "report.json").string());
      log(Level::Debug, result.report.dump());
    } else if (*metrics_cmd) {
      json j;
      j["schema_version"] = pipeline::kReportSchemaVersion;
      if (!x_mesh.empty()) {
        std::optional<harness::Surface> surface;
        if (!x_scene.empty()) {
          const fs::path meta = fs::path(x_scene) / "scene.json";
          const json sj = read_json(meta);
          try {
            surface = pipeline::surface_from_json(sj.at("surface"));
          } catch (const std::exception& e) {
            throw IoError(meta.string(), std::string("surface: ") + e.what());
          }
        }
        j["mesh"] = pipeline::mesh_metrics(io::read_mesh_ply(x_mesh), surface);
      }
      if (!x_normals.empty() || !x_gt.empty()) {
        if (x_normals.empty() || x_gt.empty()) throw ConfigError("--normals and --gt go together");
        const auto est = io::read_normals_pfm(x_normals);
        const auto gt = io::read_normals_pfm(x_gt);
        if (est.width() != gt.width() || est.height() != gt.height())
          throw IoError(x_gt, "size differs from --normals");
        const auto err = harness::angular_error(est, gt);
        j["normals"] = {{"mean_deg", err.mean_deg}, {"median_deg", err.median_deg}, {"count", err.count}};
      }
      if (x_report.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        write_json(x_report, j);
      }
    } else {
      std::cout << app.help();
      return 2;
    }
  } catch (const IoError& e) {
    log(Level::Error, e.what());
    return 2;
  } catch (const ConfigError& e) {
    log(Level::Error, e.what());
    return 2;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return 3;
  }
  return 0;
}
