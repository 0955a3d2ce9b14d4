#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "mvg/consistency.hpp"
#include "mvg/densify.hpp"
#include "mvg/meshing.hpp"
#include "mvg/quantile.hpp"
#include "mvg/refine.hpp"

namespace mvg {

struct PipelineConfig {
  refine::RefineConfig refine;
  quantile::KdeConfig kde;
  consistency::RegionThresholds thresholds;
  densify::DensifyConfig densify;
  meshing::MeshConfig mesh;
  int seed_stride = 8;  // px lattice of the initial cloud when none is given

  void validate() const;
};

/// `[section]` headers and `key = value` lines; values are numbers, true or
/// false, `auto`, or `[x, y, z]`. Every key of the config is written.
std::string to_toml(const PipelineConfig& cfg);

/// Starts from the defaults and applies every assignment in `text`. Unknown
/// sections or keys, malformed values and failed invariants throw ConfigError
/// naming `origin` and the line.
PipelineConfig parse_config(std::string_view text, const std::string& origin = "<config>");

/// Reads and parses a file; a missing file is an IoError.
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies `section.key=value` without validating the whole config.
void apply_override(PipelineConfig& cfg, std::string_view assignment);

}  // namespace mvg
