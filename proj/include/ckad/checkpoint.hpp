#pragma once

#include "ckad/model.hpp"

#include <cstdint>
#include <filesystem>

namespace ckad {

inline constexpr char kCheckpointMagic[4] = {'C', '3', 'D', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all little-endian):
///   "C3DA" | u32 version | u32 hyper bytes | hyper record
///   | u32 feature-map count | u64 seeds...
///   | u32 array count | per array: u16 name length, name, u8 dtype (0 f32, 1 f64), u64 rows, u64 cols, data
///   | u32 advisor count | per advisor: u64 update_count, f64 alpha, f64 beta
/// Trainable arrays are float32; advisor states ("advisor<b>.s") are float64.
template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path);

Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace ckad
