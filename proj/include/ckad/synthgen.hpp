#pragma once

#include "ckad/pointcloud.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ckad {

enum class Shape { sphere, box, cylinder, torus, cone, ellipsoid };

std::string to_string(Shape s);
Shape shape_from_string(const std::string& s);

struct CategorySpec {
  std::string name;  // defaults to the shape name when empty
  Shape shape = Shape::sphere;
  Eigen::Index points_per_cloud = 8192;
  double jitter_sigma = 0.002;  // fraction of object radius
  bool pose_randomization = false;

  std::string label() const { return name.empty() ? to_string(shape) : name; }
};

enum class DefectKind { bump, dent, hole, noise_patch };

std::string to_string(DefectKind k);
DefectKind defect_from_string(const std::string& s);

struct DefectSpec {
  DefectKind kind = DefectKind::bump;
  double amplitude = 0.2;  // fraction of object radius
  double extent = 0.1;     // geodesic radius as a fraction of a half great circle
};

void validate(const CategorySpec& spec);
void validate(const DefectSpec& spec);

/// Bounding radius of the primitive before jitter and pose.
double object_radius(Shape shape);

/// Surface samples of the primitive, jittered with a normal truncated at
/// 3 sigma, optionally randomly rotated. Deterministic in (spec, seed).
PointCloud generate_normal(const CategorySpec& spec, std::uint64_t seed);

/// Euclidean radius of the defect region for an object of radius `r`.
double defect_region_radius(const DefectSpec& defect, double r);

/// Applies a localized defect around a randomly chosen surface point.
/// Points outside the region are copied unchanged.
PointCloud inject_defect(const PointCloud& cloud, const DefectSpec& defect, std::uint64_t seed);

// Task streams.

struct Sample {
  std::string id;
  std::string category;
  int task = 0;  // task that introduced the category (1-based)
  std::string split;  // "train" or "test"
  ObjectLabel label = ObjectLabel::normal;
  std::optional<DefectSpec> defect;
  std::uint64_t seed = 0;
  std::shared_ptr<const PointCloud> cloud;
};

struct Task {
  int id = 0;
  std::vector<std::string> categories;  // new in this task
  std::vector<Sample> train;            // normal clouds of this task only
  std::vector<Sample> test;             // cumulative over tasks 1..id
};

struct TaskStream {
  std::vector<Task> tasks;
};

struct StreamSizes {
  int train_per_category = 20;
  int normal_test = 10;
  int anomalous_test = 10;
};

std::vector<CategorySpec> default_categories(Eigen::Index points_per_cloud = 8192, double jitter = 0.002);
std::vector<DefectSpec> default_defects(double amplitude = 0.2, double extent = 0.1);
/// Consecutive blocks of `per_task` categories.
std::vector<std::vector<std::size_t>> contiguous_partition(std::size_t categories, std::size_t tasks);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Anomalous test clouds cycle through `defects`.
TaskStream build_task_stream(const std::vector<CategorySpec>& categories,
                             const std::vector<std::vector<std::size_t>>& partition, const StreamSizes& sizes,
                             const std::vector<DefectSpec>& defects, std::uint64_t seed);

}  // namespace ckad
