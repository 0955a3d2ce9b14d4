#include "mvg/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace mvg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  s = trim(s);
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ConfigError("expected a number, got '" + std::string(s) + "'");
  return v;
}

long long parse_integer(std::string_view s) {
  s = trim(s);
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ConfigError("expected an integer, got '" + std::string(s) + "'");
  return v;
}

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

Vec3 parse_vec3(std::string_view s) {
  s = trim(s);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']')
    throw ConfigError("expected [x, y, z], got '" + std::string(s) + "'");
  s = s.substr(1, s.size() - 2);
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    const auto comma = s.find(',');
    if ((comma == std::string_view::npos) != (i == 2))
      throw ConfigError("expected exactly three components");
    v[i] = parse_double(s.substr(0, comma));
    if (comma != std::string_view::npos) s = s.substr(comma + 1);
  }
  return v;
}

std::string format_vec3(const Vec3& v) {
  return "[" + format(v.x()) + ", " + format(v.y()) + ", " + format(v.z()) + "]";
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(std::string_view)> set;
};

Field real(std::string section, std::string key, double& ref) {
  return {std::move(section), std::move(key), [&ref] { return format(ref); },
          [&ref](std::string_view s) { ref = parse_double(s); }};
}

template <typename Int>
Field integer(std::string section, std::string key, Int& ref) {
  return {std::move(section), std::move(key), [&ref] { return std::to_string(ref); },
          [&ref](std::string_view s) {
            const long long v = parse_integer(s);
            if (v < 0 && std::is_unsigned_v<Int>) throw ConfigError("expected a non-negative integer");
            ref = static_cast<Int>(v);
          }};
}

Field boolean(std::string section, std::string key, bool& ref) {
  return {std::move(section), std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref](std::string_view s) { ref = parse_bool(s); }};
}

Field vector3(std::string section, std::string key, Vec3& ref) {
  return {std::move(section), std::move(key), [&ref] { return format_vec3(ref); },
          [&ref](std::string_view s) { ref = parse_vec3(s); }};
}

std::vector<Field> fields(PipelineConfig& c) {
  std::vector<Field> f;
  f.push_back(integer("refine", "pad_n", c.refine.pad_n));
  f.push_back(real("refine", "sigma_spatial", c.refine.sigma_spatial));
  f.push_back(real("refine", "sigma_range", c.refine.sigma_range));
  f.push_back(real("refine", "alpha", c.refine.alpha));
  f.push_back(boolean("refine", "literal_eighth", c.refine.literal_eighth));
  f.push_back(boolean("refine", "literal_padded_focal", c.refine.literal_padded_focal));

  f.push_back(integer("quantile", "grid_size", c.kde.grid_size));
  f.push_back({"quantile", "bandwidth",
               [&c] { return c.kde.bandwidth ? format(*c.kde.bandwidth) : std::string("auto"); },
               [&c](std::string_view s) {
                 if (trim(s) == "auto") {
                   c.kde.bandwidth.reset();
                 } else {
                   c.kde.bandwidth = parse_double(s);
                 }
               }});
  f.push_back(real("quantile", "p_near", c.kde.p_near));
  f.push_back(real("quantile", "p_far", c.kde.p_far));

  const std::pair<const char*, consistency::Thresholds*> regions[] = {
      {"consistency.near", &c.thresholds.near},
      {"consistency.mid", &c.thresholds.mid},
      {"consistency.far", &c.thresholds.far}};
  for (const auto& [name, t] : regions) {
    f.push_back(real(name, "pixel_tol", t->pixel_tol));
    f.push_back(real(name, "rel_depth_tol", t->rel_depth_tol));
    f.push_back(integer(name, "min_views", t->min_views));
  }

  f.push_back(integer("densify", "interval", c.densify.interval));
  f.push_back(real("densify", "scale_threshold", c.densify.scale_threshold));
  f.push_back(integer("densify", "max_new_per_view", c.densify.max_new_per_view));
  f.push_back(integer("densify", "stride", c.densify.stride));
  f.push_back(real("densify", "init_opacity", c.densify.init_opacity));
  f.push_back(integer("densify", "knn_k", c.densify.knn_k));
  f.push_back(integer("densify", "seed_stride", c.seed_stride));

  f.push_back(real("mesh", "base_voxel", c.mesh.base_voxel));
  f.push_back(real("mesh", "voxel_min", c.mesh.voxel_min));
  f.push_back(real("mesh", "voxel_max", c.mesh.voxel_max));
  f.push_back(integer("mesh", "smooth_steps", c.mesh.smooth_steps));
  f.push_back(integer("mesh", "floater_knn", c.mesh.floater_knn));
  f.push_back(real("mesh", "floater_sigma", c.mesh.floater_sigma));
  f.push_back(real("mesh", "iso", c.mesh.iso));
  f.push_back(boolean("mesh", "smooth_mesh", c.mesh.smooth_mesh));
  f.push_back(boolean("mesh", "laplacian_smooth", c.mesh.laplacian_smooth));
  f.push_back(integer("mesh", "laplacian_iterations", c.mesh.laplacian_iterations));
  f.push_back(real("mesh", "normal_blend", c.mesh.normal_blend));
  f.push_back(real("mesh", "relax_lambda", c.mesh.relax_lambda));
  f.push_back(integer("mesh", "smooth_knn", c.mesh.smooth_knn));
  f.push_back(vector3("mesh", "bbox_min", c.mesh.bbox.lo));
  f.push_back(vector3("mesh", "bbox_max", c.mesh.bbox.hi));
  return f;
}

Field& find_field(std::vector<Field>& all, std::string_view section, std::string_view key) {
  bool section_known = false;
  for (Field& f : all) {
    if (f.section != section) continue;
    section_known = true;
    if (f.key == key) return f;
  }
  if (!section_known) throw ConfigError("unknown section [" + std::string(section) + "]");
  throw ConfigError("unknown key '" + std::string(key) + "' in [" + std::string(section) + "]");
}

}  // namespace

void PipelineConfig::validate() const {
  refine.validate();
  kde.validate();
  thresholds.validate();
  densify.validate();
  mesh.validate();
  if (seed_stride < 1) throw ConfigError("densify: seed_stride must be >= 1");
}

std::string to_toml(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get() << '\n';
  }
  return out.str();
}

PipelineConfig parse_config(std::string_view text, const std::string& origin) {
  PipelineConfig cfg;
  std::vector<Field> all = fields(cfg);
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (std::none_of(all.begin(), all.end(), [&](const Field& f) { return f.section == section; }))
          throw ConfigError("unknown section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      if (section.empty()) throw ConfigError("assignment outside a section");
      find_field(all, section, trim(line.substr(0, eq))).set(trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

void apply_override(PipelineConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must look like section.key=value");
  const std::string_view name = trim(assignment.substr(0, eq));
  const auto dot = name.rfind('.');
  if (dot == std::string_view::npos) throw ConfigError("override must look like section.key=value");
  std::vector<Field> all = fields(cfg);
  try {
    find_field(all, name.substr(0, dot), name.substr(dot + 1)).set(assignment.substr(eq + 1));
  } catch (const ConfigError& e) {
    throw ConfigError("--set " + std::string(assignment) + ": " + e.what());
  }
}

}  // namespace mvg
