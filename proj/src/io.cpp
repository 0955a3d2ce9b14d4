#include "mvg/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace mvg::io {

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  return in;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

// ---------------------------------------------------------------------------
// PFM

struct PfmData {
  int width = 0, height = 0, channels = 0;
  std::vector<float> values;  // top-to-bottom, interleaved
};

void write_pfm(const fs::path& path, const PfmData& pfm) {
  auto out = open_out(path);
  out << (pfm.channels == 3 ? "PF" : "Pf") << "\n" << pfm.width << " " << pfm.height << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(pfm.width) * pfm.channels;
  for (int y = pfm.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(pfm.values.data() + y * row),
              static_cast<std::streamsize>(row * sizeof(float)));
  if (!out) throw IoError(path.string(), "write failed");
}

PfmData read_pfm(const fs::path& path) {
  auto in = open_in(path);
  std::string magic;
  PfmData pfm;
  double scale = 0.0;
  in >> magic >> pfm.width >> pfm.height >> scale;
  if (!in || (magic != "Pf" && magic != "PF"))
    throw IoError(path.string(), "not a PFM file (bad header)");
  if (pfm.width <= 0 || pfm.height <= 0) throw IoError(path.string(), "invalid PFM dimensions");
  if (scale >= 0.0) throw IoError(path.string(), "big-endian PFM is not supported");
  in.get();  // single whitespace after the scale
  pfm.channels = magic == "PF" ? 3 : 1;
  const std::size_t row = static_cast<std::size_t>(pfm.width) * pfm.channels;
  pfm.values.resize(row * pfm.height);
  for (int y = pfm.height - 1; y >= 0; --y)
    in.read(reinterpret_cast<char*>(pfm.values.data() + y * row),
            static_cast<std::streamsize>(row * sizeof(float)));
  if (!in) throw IoError(path.string(), "truncated PFM payload");
  return pfm;
}

// ---------------------------------------------------------------------------
// PNG via libpng

struct PngImage {
  int width = 0, height = 0, channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

void write_png(const fs::path& path, const PngImage& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError(path.string(), "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string(), "PNG encoding failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PngImage read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError(path.string(), "cannot open for reading");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError(path.string(), "not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "PNG decoding failed");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  PngImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string(), "unsupported PNG channel layout");
  }
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  img.pixels.resize(stride * img.height);
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * stride, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::uint8_t to_byte(double c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

bool has_ext(const fs::path& p, const char* ext) {
  auto e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(ch));
  return e == ext;
}

// ---------------------------------------------------------------------------
// PLY

struct PlyProperty {
  std::string name;
  std::string type;       // scalar type or list item type
  std::string count_type; // non-empty for lists
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

std::size_t type_size(const std::string& t, const std::string& path) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw IoError(path, "unknown PLY property type '" + t + "'");
}

double read_scalar(std::istream& in, const std::string& t) {
  auto get = [&](auto v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  if (t == "uint" || t == "uint32") return get(std::uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

std::vector<PlyElement> read_ply_header(std::istream& in, const std::string& path) {
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw IoError(path, "not a PLY file");
  std::vector<PlyElement> elems;
  bool format_ok = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") throw IoError(path, "only binary_little_endian PLY is supported");
      format_ok = true;
    } else if (tok == "element") {
      PlyElement e;
      ss >> e.name >> e.count;
      elems.push_back(e);
    } else if (tok == "property") {
      if (elems.empty()) throw IoError(path, "property before element");
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        ss >> p.count_type >> p.type >> p.name;
        type_size(p.count_type, path);
      } else {
        p.type = t;
        ss >> p.name;
      }
      type_size(p.type, path);
      elems.back().props.push_back(p);
    } else if (tok == "end_header") {
      if (!format_ok) throw IoError(path, "missing PLY format line");
      return elems;
    }
  }
  throw IoError(path, "unterminated PLY header");
}

/// Reads scalar-only element rows into a name-indexed table.
std::vector<std::vector<double>> read_rows(std::istream& in, const PlyElement& e,
                                           const std::string& path) {
  std::vector<std::vector<double>> rows(e.count, std::vector<double>(e.props.size()));
  for (std::size_t i = 0; i < e.count; ++i)
    for (std::size_t p = 0; p < e.props.size(); ++p) {
      if (!e.props[p].count_type.empty()) throw IoError(path, "unexpected list property in " + e.name);
      rows[i][p] = read_scalar(in, e.props[p].type);
    }
  if (!in) throw IoError(path, "truncated PLY payload");
  return rows;
}

std::size_t prop_index(const PlyElement& e, const std::string& name, const std::string& path) {
  for (std::size_t i = 0; i < e.props.size(); ++i)
    if (e.props[i].name == name) return i;
  throw IoError(path, "PLY element '" + e.name + "' lacks property '" + name + "'");
}

void skip_element(std::istream& in, const PlyElement& e, const std::string& path) {
  for (std::size_t i = 0; i < e.count; ++i)
    for (const auto& p : e.props) {
      if (p.count_type.empty()) {
        read_scalar(in, p.type);
      } else {
        const auto n = static_cast<std::size_t>(read_scalar(in, p.count_type));
        for (std::size_t j = 0; j < n; ++j) read_scalar(in, p.type);
      }
    }
  if (!in) throw IoError(path, "truncated PLY payload");
}

constexpr const char* kSurfelProps[] = {"x",  "y",  "z",  "nx", "ny", "nz",
                                        "qw", "qx", "qy", "qz", "sx", "sy",
                                        "opacity_logit", "sh0_r", "sh0_g", "sh0_b"};

}  // namespace

// ---------------------------------------------------------------------------

void write_depth_pfm(const fs::path& path, const DepthMap& depth) {
  PfmData pfm{depth.width(), depth.height(), 1, {}};
  pfm.values.resize(depth.values.size());
  for (std::size_t i = 0; i < pfm.values.size(); ++i)
    pfm.values[i] = depth.valid.data[i] ? static_cast<float>(depth.values.data[i]) : 0.0f;
  write_pfm(path, pfm);
}

DepthMap read_depth_pfm(const fs::path& path) {
  const PfmData pfm = read_pfm(path);
  if (pfm.channels != 1) throw IoError(path.string(), "expected single-channel PFM depth");
  Grid<double> v(pfm.width, pfm.height, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = pfm.values[i];
  return DepthMap::from_values(std::move(v));
}

void write_normals_pfm(const fs::path& path, const NormalMap& normals) {
  PfmData pfm{normals.width(), normals.height(), 3, {}};
  pfm.values.assign(normals.values.size() * 3, 0.0f);
  for (std::size_t i = 0; i < normals.values.size(); ++i) {
    if (!normals.valid.data[i]) continue;
    for (int c = 0; c < 3; ++c) pfm.values[3 * i + c] = static_cast<float>(normals.values.data[i][c]);
  }
  write_pfm(path, pfm);
}

NormalMap read_normals_pfm(const fs::path& path) {
  const PfmData pfm = read_pfm(path);
  if (pfm.channels != 3) throw IoError(path.string(), "expected three-channel PFM normals");
  NormalMap n(pfm.width, pfm.height);
  for (std::size_t i = 0; i < n.values.size(); ++i) {
    const Vec3 v(pfm.values[3 * i], pfm.values[3 * i + 1], pfm.values[3 * i + 2]);
    const double len = v.norm();
    if (std::isfinite(len) && len > 0.5) {
      n.values.data[i] = v / len;
      n.valid.data[i] = 1;
    }
  }
  return n;
}

void write_image(const fs::path& path, const ImageBuffer& image) {
  PngImage img{image.width(), image.height(), 3, {}};
  img.pixels.resize(image.rgb.size() * 3);
  for (std::size_t i = 0; i < image.rgb.size(); ++i)
    for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = to_byte(image.rgb.data[i][c]);
  if (has_ext(path, ".ppm")) {
    auto out = open_out(path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    return;
  }
  write_png(path, img);
}

ImageBuffer read_image(const fs::path& path) {
  PngImage img;
  if (has_ext(path, ".ppm")) {
    auto in = open_in(path);
    std::string magic;
    int maxval = 0;
    in >> magic >> img.width >> img.height >> maxval;
    if (!in || magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0)
      throw IoError(path.string(), "unsupported PPM header (need binary P6, maxval 255)");
    in.get();
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw IoError(path.string(), "truncated PPM payload");
  } else {
    img = read_png(path);
  }
  ImageBuffer out(img.width, img.height);
  for (std::size_t i = 0; i < out.rgb.size(); ++i) {
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch)
      c[ch] = img.pixels[img.channels * i + (img.channels == 3 ? ch : 0)] / 255.0;
    out.rgb.data[i] = c;
  }
  return out;
}

void write_mask_png(const fs::path& path, const Mask& mask) {
  PngImage img{mask.width, mask.height, 1, {}};
  img.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask.data[i] ? 255 : 0;
  write_png(path, img);
}

Mask read_mask_png(const fs::path& path) {
  const PngImage img = read_png(path);
  Mask m(img.width, img.height, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = img.pixels[img.channels * i] >= 128;
  return m;
}

// ---------------------------------------------------------------------------

void write_camera_json(const fs::path& path, const CameraRecord& cam) {
  nlohmann::ordered_json j;
  j["id"] = cam.id;
  j["width"] = cam.intrinsics.width;
  j["height"] = cam.intrinsics.height;
  j["fx"] = cam.intrinsics.fx;
  j["fy"] = cam.intrinsics.fy;
  j["cx"] = cam.intrinsics.cx;
  j["cy"] = cam.intrinsics.cy;
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) r[3 * i + c] = cam.pose.rotation(i, c);
    t[i] = cam.pose.translation[i];
  }
  j["rotation"] = r;
  j["translation"] = t;
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

CameraRecord read_camera_json(const fs::path& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("malformed JSON: ") + e.what());
  }
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) throw IoError(path.string(), std::string("missing field '") + name + "'");
    return j.at(name);
  };
  CameraRecord cam;
  try {
    cam.id = field("id").get<int>();
    cam.intrinsics.width = field("width").get<int>();
    cam.intrinsics.height = field("height").get<int>();
    cam.intrinsics.fx = field("fx").get<double>();
    cam.intrinsics.fy = field("fy").get<double>();
    cam.intrinsics.cx = field("cx").get<double>();
    cam.intrinsics.cy = field("cy").get<double>();
    const auto r = field("rotation").get<std::vector<double>>();
    const auto t = field("translation").get<std::vector<double>>();
    if (r.size() != 9) throw IoError(path.string(), "field 'rotation' must hold 9 numbers");
    if (t.size() != 3) throw IoError(path.string(), "field 'translation' must hold 3 numbers");
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) cam.pose.rotation(i, c) = r[3 * i + c];
      cam.pose.translation[i] = t[i];
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("bad field type: ") + e.what());
  }
  try {
    cam.intrinsics.validate();
    cam.pose.validate();
  } catch (const ConfigError& e) {
    throw IoError(path.string(), e.what());
  }
  return cam;
}

// ---------------------------------------------------------------------------

namespace {

std::array<float, 16> surfel_record(const Surfel& s) {
  const double v[16] = {s.position.x(), s.position.y(), s.position.z(), s.normal.x(),
                        s.normal.y(),   s.normal.z(),   s.rotation.w(), s.rotation.x(),
                        s.rotation.y(), s.rotation.z(), s.scale.x(),    s.scale.y(),
                        s.opacity_logit, s.sh0.x(),     s.sh0.y(),      s.sh0.z()};
  std::array<float, 16> out;
  for (int i = 0; i < 16; ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

/// `at(k)` yields property k in kSurfelProps order.
template <typename At>
Surfel surfel_from_record(At at) {
  Surfel s;
  s.position = Vec3(at(0), at(1), at(2));
  s.normal = Vec3(at(3), at(4), at(5)).normalized();
  s.rotation = Quat(at(6), at(7), at(8), at(9)).normalized();
  s.scale = Vec2(at(10), at(11));
  s.opacity_logit = at(12);
  s.sh0 = Vec3(at(13), at(14), at(15));
  return s;
}

void write_surfels(std::ostream& out, const SurfelCloud& cloud) {
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
  for (const char* p : kSurfelProps) out << "property float " << p << "\n";
  out << "end_header\n";
  for (const Surfel& s : cloud)
    for (float x : surfel_record(s)) put(out, x);
}

SurfelCloud read_surfels(std::istream& in, const std::string& name) {
  const auto elems = read_ply_header(in, name);
  SurfelCloud cloud;
  for (const auto& e : elems) {
    if (e.name != "vertex") {
      skip_element(in, e, name);
      continue;
    }
    std::size_t idx[16];
    for (int k = 0; k < 16; ++k) idx[k] = prop_index(e, kSurfelProps[k], name);
    const auto rows = read_rows(in, e, name);
    cloud.reserve(rows.size());
    for (const auto& r : rows) cloud.push_back(surfel_from_record([&](int k) { return r[idx[k]]; }));
  }
  return cloud;
}

}  // namespace

void write_surfels_ply(const fs::path& path, const SurfelCloud& cloud) {
  auto out = open_out(path);
  write_surfels(out, cloud);
  if (!out) throw IoError(path.string(), "write failed");
}

// Goes through the real byte encoding: an in-register float cast can be
// optimised away, a serialised one cannot.
SurfelCloud as_stored(const SurfelCloud& cloud) {
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  write_surfels(buf, cloud);
  return read_surfels(buf, "<memory>");
}

SurfelCloud read_surfels_ply(const fs::path& path) {
  auto in = open_in(path);
  return read_surfels(in, path.string());
}

void write_mesh_ply(const fs::path& path, const TriangleMesh& mesh) {
  auto out = open_out(path);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << mesh.vertices.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n";
  const bool normals = mesh.normals.size() == mesh.vertices.size() && !mesh.normals.empty();
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "element face " << mesh.triangles.size()
      << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int c = 0; c < 3; ++c) put(out, static_cast<float>(mesh.vertices[i][c]));
    if (normals)
      for (int c = 0; c < 3; ++c) put(out, static_cast<float>(mesh.normals[i][c]));
  }
  for (const auto& t : mesh.triangles) {
    put(out, std::uint8_t{3});
    for (auto v : t) put(out, static_cast<std::int32_t>(v));
  }
  if (!out) throw IoError(path.string(), "write failed");
}

TriangleMesh read_mesh_ply(const fs::path& path) {
  auto in = open_in(path);
  const auto elems = read_ply_header(in, path.string());
  TriangleMesh mesh;
  for (const auto& e : elems) {
    if (e.name == "vertex") {
      const auto x = prop_index(e, "x", path.string()), y = prop_index(e, "y", path.string()),
                 z = prop_index(e, "z", path.string());
      for (const auto& r : read_rows(in, e, path.string())) mesh.vertices.emplace_back(r[x], r[y], r[z]);
    } else if (e.name == "face") {
      if (e.props.size() != 1 || e.props[0].count_type.empty())
        throw IoError(path.string(), "face element must hold a single index list");
      for (std::size_t i = 0; i < e.count; ++i) {
        const auto n = static_cast<std::size_t>(read_scalar(in, e.props[0].count_type));
        std::vector<std::uint32_t> poly(n);
        for (auto& v : poly) v = static_cast<std::uint32_t>(read_scalar(in, e.props[0].type));
        for (std::size_t k = 1; k + 1 < n; ++k) mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
      }
      if (!in) throw IoError(path.string(), "truncated PLY payload");
    } else {
      skip_element(in, e, path.string());
    }
  }
  for (const auto& t : mesh.triangles)
    for (auto v : t)
      if (v >= mesh.vertices.size()) throw IoError(path.string(), "face index out of range");
  return mesh;
}

void write_mesh_obj(const fs::path& path, const TriangleMesh& mesh) {
  auto out = open_out(path);
  char buf[96];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace mvg::io
