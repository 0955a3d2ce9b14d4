#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvg/core.hpp"
#include "mvg/triangle_mesh.hpp"

namespace mvg::io {

namespace fs = std::filesystem;

// PFM: little-endian float32, negative scale header, bottom-to-top rows.
// Pixels that are zero or non-finite read back as invalid depth.
void write_depth_pfm(const fs::path& path, const DepthMap& depth);
DepthMap read_depth_pfm(const fs::path& path);
/// Three-channel PFM; invalid normals are written as (0, 0, 0).
void write_normals_pfm(const fs::path& path, const NormalMap& normals);
NormalMap read_normals_pfm(const fs::path& path);

// 8-bit RGB images. PNG or binary PPM chosen by extension.
void write_image(const fs::path& path, const ImageBuffer& image);
ImageBuffer read_image(const fs::path& path);
/// Grayscale PNG, 255 for set pixels.
void write_mask_png(const fs::path& path, const Mask& mask);
Mask read_mask_png(const fs::path& path);

struct CameraRecord {
  int id = 0;
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

void write_camera_json(const fs::path& path, const CameraRecord& cam);
CameraRecord read_camera_json(const fs::path& path);

/// Binary little-endian PLY with x,y,z,nx,ny,nz,qw,qx,qy,qz,sx,sy,
/// opacity_logit,sh0_r,sh0_g,sh0_b as float32.
void write_surfels_ply(const fs::path& path, const SurfelCloud& cloud);
SurfelCloud read_surfels_ply(const fs::path& path);
/// The cloud exactly as read_surfels_ply returns it after write_surfels_ply.
SurfelCloud as_stored(const SurfelCloud& cloud);

/// Binary little-endian PLY (float32 vertices, uchar/int32 face lists).
void write_mesh_ply(const fs::path& path, const TriangleMesh& mesh);
TriangleMesh read_mesh_ply(const fs::path& path);
void write_mesh_obj(const fs::path& path, const TriangleMesh& mesh);

}  // namespace mvg::io
