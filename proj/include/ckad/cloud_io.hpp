#pragma once

#include "ckad/pointcloud.hpp"

#include <filesystem>
#include <string>

namespace ckad {

enum class CloudFormat { xyz, ply };

/// Picks the format from the file extension (.xyz/.txt or .ply).
CloudFormat format_from_path(const std::filesystem::path& path);

/// XYZ: one "x y z" line per point, '#' starts a comment line.
/// PLY: binary_little_endian, a single vertex element with float x, y, z and
/// an optional trailing uchar label (per-point anomaly flag).
/// Errors carry the line number (XYZ) or byte offset (PLY).
PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace ckad
