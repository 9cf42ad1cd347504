#include "ckad/pointcloud.hpp"

#include "ckad/log.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace ckad {

void validate(const PointCloud& cloud) {
  if (cloud.points.rows() == 0) throw ArgumentError("point cloud is empty");
  if (!cloud.points.allFinite()) throw ArgumentError("point cloud has non-finite coordinates");
  if (cloud.point_labels && static_cast<Eigen::Index>(cloud.point_labels->size()) != cloud.points.rows())
    throw ArgumentError("point label count does not match point count");
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  validate(cloud);
  const Eigen::RowVector3d centroid = cloud.points.colwise().mean();
  PointCloud out = cloud;
  out.points = cloud.points.rowwise() - centroid;
  const double max_norm = out.points.rowwise().norm().maxCoeff();
  const double reference = std::max(1.0, centroid.norm());
  if (!(max_norm > 1e-12 * reference)) throw DegenerateError("cannot normalize a cloud whose points all coincide");
  out.points /= max_norm;
  return out;
}

std::vector<Eigen::Index> fps_sample_from(const Points& points, Eigen::Index n, Eigen::Index first) {
  const Eigen::Index count = points.rows();
  if (n < 2 || n > count)
    throw ArgumentError("fps: requested " + std::to_string(n) + " centers from " + std::to_string(count) + " points");
  if (first < 0 || first >= count) throw ArgumentError("fps: first index out of range");

  std::vector<Eigen::Index> picked;
  picked.reserve(static_cast<std::size_t>(n));
  picked.push_back(first);
  VectorXd min_dist = (points.rowwise() - points.row(first)).rowwise().squaredNorm();
  while (static_cast<Eigen::Index>(picked.size()) < n) {
    Eigen::Index best = 0;
    min_dist.maxCoeff(&best);  // first maximal entry
    picked.push_back(best);
    min_dist = min_dist.cwiseMin((points.rowwise() - points.row(best)).rowwise().squaredNorm());
  }
  return picked;
}

std::vector<Eigen::Index> fps_sample(const Points& points, Eigen::Index n, std::uint64_t seed) {
  if (points.rows() == 0) throw ArgumentError("fps: empty cloud");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, points.rows() - 1);
  return fps_sample_from(points, n, pick(rng));
}

Points gather_rows(const Points& points, const std::vector<Eigen::Index>& indices) {
  Points out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = points.row(indices[i]);
  return out;
}

VectorXd adaptive_radius(const Points& centers, double eta, RadiusMode mode) {
  const Eigen::Index n = centers.rows();
  if (n < 2) throw ArgumentError("adaptive_radius needs at least two centers");
  if (!(eta >= 0.0)) throw ArgumentError("adaptive_radius: eta must be non-negative");
  VectorXd radii(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // The self term contributes a zero distance but still counts in the mean.
    radii(i) = eta / static_cast<double>(n) * (centers.rowwise() - centers.row(i)).rowwise().norm().sum();
  }
  if (mode == RadiusMode::global) radii.setConstant(radii.mean());
  return radii;
}

namespace {

// Indices of the `k` smallest entries, ordered by (distance, index).
std::vector<Eigen::Index> nearest(const VectorXd& sq_dist, const std::vector<Eigen::Index>& candidates,
                                  std::size_t k) {
  std::vector<Eigen::Index> order = candidates;
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    return sq_dist(a) < sq_dist(b) || (sq_dist(a) == sq_dist(b) && a < b);
  };
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
  order.resize(k);
  return order;
}

}  // namespace

GroupedCloud group_points(const Points& points, const Points& centers, const VectorXd& radii,
                          Eigen::Index group_size) {
  if (group_size < 1) throw ArgumentError("group size must be at least 1");
  if (radii.size() != centers.rows()) throw ArgumentError("one radius per center required");
  if (points.rows() == 0) throw ArgumentError("cannot group an empty cloud");

  const Eigen::Index n = centers.rows();
  const auto g = static_cast<std::size_t>(group_size);
  GroupedCloud out;
  out.centers = centers;
  out.radii = radii;
  out.group_size = group_size;
  out.members.resize(n * group_size, 3);
  out.in_radius_count.assign(static_cast<std::size_t>(n), 0);
  out.knn_fallback.assign(static_cast<std::size_t>(n), false);

  std::vector<Eigen::Index> all(static_cast<std::size_t>(points.rows()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});

  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd sq_dist = (points.rowwise() - centers.row(i)).rowwise().squaredNorm();
    const double r = radii(i);
    std::vector<Eigen::Index> members;
    if (r > 0.0) {
      const double limit = r * r * (1.0 + 1e-12);
      for (Eigen::Index j = 0; j < points.rows(); ++j)
        if (sq_dist(j) <= limit) members.push_back(j);
    }
    out.in_radius_count[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(members.size());

    std::vector<Eigen::Index> chosen;
    if (members.empty()) {
      log::warn("grouping", "knn_fallback", "center " + std::to_string(i) + " radius " + std::to_string(r));
      out.knn_fallback[static_cast<std::size_t>(i)] = true;
      chosen = nearest(sq_dist, all, g);
    } else {
      chosen = nearest(sq_dist, members, g);
    }
    // Pad by cycling through the nearest members.
    const std::size_t distinct = chosen.size();
    for (std::size_t k = distinct; k < g; ++k) chosen.push_back(chosen[k % distinct]);

    for (std::size_t k = 0; k < g; ++k)
      out.members.row(i * group_size + static_cast<Eigen::Index>(k)) = points.row(chosen[k]) - centers.row(i);
  }
  return out;
}

GroupedCloud make_groups(const PointCloud& cloud, const GroupingConfig& cfg) {
  const PointCloud normalized = normalize_cloud(cloud);
  const auto idx = fps_sample(normalized.points, cfg.num_groups, cfg.fps_seed);
  const Points centers = gather_rows(normalized.points, idx);
  const VectorXd radii = adaptive_radius(centers, cfg.eta, cfg.radius_mode);
  return group_points(normalized.points, centers, radii, cfg.group_size);
}

}  // namespace ckad
