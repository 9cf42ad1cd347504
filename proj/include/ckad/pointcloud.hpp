#pragma once

#include "ckad/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace ckad {

enum class ObjectLabel : std::uint8_t { normal = 0, anomalous = 1 };

struct PointCloud {
  Points points;
  ObjectLabel label = ObjectLabel::normal;
  /// Optional per-point anomaly flags, same length as points when present.
  std::optional<std::vector<std::uint8_t>> point_labels;

  Eigen::Index size() const { return points.rows(); }
};

/// Throws ArgumentError when N == 0, a coordinate is non-finite, or the
/// per-point label count mismatches.
void validate(const PointCloud& cloud);

/// Translate to zero centroid and scale so the largest point norm is 1.
PointCloud normalize_cloud(const PointCloud& cloud);

/// Farthest point sampling. The first index is drawn uniformly from the
/// seed; each later pick maximizes the distance to the chosen set (lowest
/// index wins ties). Returns indices into `points`.
std::vector<Eigen::Index> fps_sample(const Points& points, Eigen::Index n, std::uint64_t seed);
/// Same greedy rule starting from a fixed first index.
std::vector<Eigen::Index> fps_sample_from(const Points& points, Eigen::Index n, Eigen::Index first);

Points gather_rows(const Points& points, const std::vector<Eigen::Index>& indices);

enum class RadiusMode : std::uint8_t {
  per_center,  // r_i = eta / n * sum_j |c_i - c_j|
  global,      // every r_i replaced by the mean of the per-center radii
};

VectorXd adaptive_radius(const Points& centers, double eta, RadiusMode mode = RadiusMode::per_center);

struct GroupedCloud {
  Points centers;    // n x 3
  VectorXd radii;    // n
  Eigen::Index group_size = 0;
  /// (n * g) x 3; group i occupies rows [i*g, (i+1)*g), center-relative.
  Points members;
  /// Number of distinct in-radius points found before truncation/padding.
  std::vector<Eigen::Index> in_radius_count;
  /// Groups built by the k-nearest fallback (zero or empty radius).
  std::vector<bool> knn_fallback;

  Eigen::Index num_groups() const { return centers.rows(); }
  auto group(Eigen::Index i) const { return members.middleRows(i * group_size, group_size); }
};

GroupedCloud group_points(const Points& points, const Points& centers, const VectorXd& radii,
                          Eigen::Index group_size);

struct GroupingConfig {
  Eigen::Index num_groups = 256;
  Eigen::Index group_size = 32;
  double eta = 10.0;
  RadiusMode radius_mode = RadiusMode::per_center;
  std::uint64_t fps_seed = 0;
};

/// normalize -> fps -> adaptive radius -> group.
GroupedCloud make_groups(const PointCloud& cloud, const GroupingConfig& cfg);

}  // namespace ckad
