#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvg/config.hpp"
#include "mvg/harness.hpp"

namespace mvg::pipeline {

namespace fs = std::filesystem;

/// An internal consistency check failed after a stage completed.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

inline constexpr int kReportSchemaVersion = 1;

/// Views in ascending id order plus optional ground truth.
struct SceneData {
  std::vector<View> views;
  std::map<int, NormalMap> gt_normals;  // camera frame
  std::optional<harness::Surface> surface;
};

/// Layout: cameras/NNN.json, depth/NNN.pfm, images/NNN.png, optional
/// gt_normals/NNN.pfm and scene.json describing the analytic surface.
SceneData load_scene(const fs::path& dir);
void save_scene(const fs::path& dir, const harness::SyntheticScene& scene);

std::string view_stem(int id);

nlohmann::json surface_to_json(const harness::Surface& s);
harness::Surface surface_from_json(const nlohmann::json& j);

/// Pixels of `m` whose whole (2r+1)^2 window is set and inside the image.
Mask erode(const Mask& m, int r);

inline constexpr int kSeedMargin = 2;  // px kept clear of invalid depth when seeding

/// Initial cloud: valid pixels at least kSeedMargin from invalid depth, on a
/// `stride` lattice of every view.
SurfelCloud seed_cloud(const std::vector<View>& views, const std::map<int, NormalMap>& normals,
                       const densify::DensifyConfig& cfg, int stride);

struct PipelineResult {
  SurfelCloud cloud;
  TriangleMesh mesh;
  nlohmann::json report;
};

/// refine -> segment -> consistency -> densify -> mesh. Writes refined/,
/// normals/, masks/, cloud.ply, mesh.ply and report.json under `out_dir`
/// when it is non-empty.
PipelineResult run_pipeline(const SceneData& scene, const PipelineConfig& cfg,
                            const fs::path& out_dir = {}, const SurfelCloud* initial = nullptr);

/// Metrics of a mesh against the analytic surface, Euler characteristic and
/// boundary edge count always included.
nlohmann::json mesh_metrics(const TriangleMesh& mesh, const std::optional<harness::Surface>& s);

}  // namespace mvg::pipeline
