#pragma once

#include "ckad/config.hpp"
#include "ckad/synthgen.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace ckad {

inline constexpr const char* kManifestName = "manifest.json";

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_hash(const std::filesystem::path& path);

/// Writes every cloud of the stream as binary PLY under `dir` and a manifest
/// listing each file with its metadata and content hash. Returns the manifest
/// hash (over the manifest text).
std::uint64_t write_dataset(const TaskStream& stream, const RunConfig& cfg, const std::filesystem::path& dir);

/// Rebuilds a stream from a dataset directory. Missing files, hash mismatches
/// and manifests that disagree with `cfg` on the data shape raise DataError.
TaskStream load_dataset(const std::filesystem::path& dir, const RunConfig& cfg);

/// True when `dir` exists and holds at least one entry.
bool non_empty_directory(const std::filesystem::path& dir);

}  // namespace ckad
