#include "ckad/synthgen.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

namespace ckad {
namespace {

constexpr double kPi = std::numbers::pi;

// Primitive dimensions.
constexpr std::array<double, 3> kBoxHalf{1.0, 0.7, 0.5};
constexpr double kCylRadius = 0.6, kCylHalfHeight = 1.0;
constexpr double kTorusMajor = 1.0, kTorusMinor = 0.35;
constexpr double kConeRadius = 0.8, kConeBase = -0.6, kConeApex = 1.0;
constexpr std::array<double, 3> kEllipsoid{1.0, 0.7, 0.5};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Point3 sphere_direction(Rng& rng) {
  std::normal_distribution<double> nd;
  Point3 v;
  do {
    v = Point3(nd(rng), nd(rng), nd(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

Point3 sample_box(Rng& rng) {
  const double hx = kBoxHalf[0], hy = kBoxHalf[1], hz = kBoxHalf[2];
  const std::array<double, 3> area{hy * hz, hx * hz, hx * hy};  // per face pair, up to a shared factor
  const double pick = uniform(rng, 0.0, area[0] + area[1] + area[2]);
  const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
  const double a = uniform(rng, -1.0, 1.0), b = uniform(rng, -1.0, 1.0);
  if (pick < area[0]) return {sign * hx, a * hy, b * hz};
  if (pick < area[0] + area[1]) return {a * hx, sign * hy, b * hz};
  return {a * hx, b * hy, sign * hz};
}

Point3 sample_cylinder(Rng& rng) {
  const double lateral = 2.0 * kPi * kCylRadius * 2.0 * kCylHalfHeight;
  const double cap = kPi * kCylRadius * kCylRadius;
  const double pick = uniform(rng, 0.0, lateral + 2.0 * cap);
  const double theta = uniform(rng, 0.0, 2.0 * kPi);
  if (pick < lateral)
    return {kCylRadius * std::cos(theta), kCylRadius * std::sin(theta), uniform(rng, -kCylHalfHeight, kCylHalfHeight)};
  const double rr = kCylRadius * std::sqrt(uniform(rng));
  const double z = pick < lateral + cap ? kCylHalfHeight : -kCylHalfHeight;
  return {rr * std::cos(theta), rr * std::sin(theta), z};
}

Point3 sample_torus(Rng& rng) {
  while (true) {
    const double u = uniform(rng, 0.0, 2.0 * kPi), v = uniform(rng, 0.0, 2.0 * kPi);
    const double w = (kTorusMajor + kTorusMinor * std::cos(v)) / (kTorusMajor + kTorusMinor);
    if (uniform(rng) > w) continue;
    const double ring = kTorusMajor + kTorusMinor * std::cos(v);
    return {ring * std::cos(u), ring * std::sin(u), kTorusMinor * std::sin(v)};
  }
}

Point3 sample_cone(Rng& rng) {
  const double h = kConeApex - kConeBase;
  const double slant = std::hypot(kConeRadius, h);
  const double lateral = kPi * kConeRadius * slant;
  const double base = kPi * kConeRadius * kConeRadius;
  const double theta = uniform(rng, 0.0, 2.0 * kPi);
  if (uniform(rng, 0.0, lateral + base) < lateral) {
    const double t = std::sqrt(uniform(rng));  // fraction of the way from apex to base
    const double rr = t * kConeRadius;
    return {rr * std::cos(theta), rr * std::sin(theta), kConeApex - t * h};
  }
  const double rr = kConeRadius * std::sqrt(uniform(rng));
  return {rr * std::cos(theta), rr * std::sin(theta), kConeBase};
}

Point3 sample_ellipsoid(Rng& rng) {
  const Point3 axes(kEllipsoid[0], kEllipsoid[1], kEllipsoid[2]);
  const double g_max = 1.0 / axes.minCoeff();
  while (true) {
    const Point3 u = sphere_direction(rng);
    // Area element of the map u -> diag(axes) u, up to a constant factor.
    const double g = u.cwiseQuotient(axes).norm();
    if (uniform(rng) * g_max <= g) return u.cwiseProduct(axes);
  }
}

Point3 sample_surface(Shape shape, Rng& rng) {
  switch (shape) {
    case Shape::sphere: return sphere_direction(rng);
    case Shape::box: return sample_box(rng);
    case Shape::cylinder: return sample_cylinder(rng);
    case Shape::torus: return sample_torus(rng);
    case Shape::cone: return sample_cone(rng);
    case Shape::ellipsoid: return sample_ellipsoid(rng);
  }
  throw ArgumentError("unknown shape");
}

double truncated_normal(Rng& rng, double sigma) {
  std::normal_distribution<double> nd;
  double z = 0.0;
  do {
    z = nd(rng);
  } while (std::abs(z) > 3.0);
  return sigma * z;
}

}  // namespace

std::string to_string(Shape s) {
  switch (s) {
    case Shape::sphere: return "sphere";
    case Shape::box: return "box";
    case Shape::cylinder: return "cylinder";
    case Shape::torus: return "torus";
    case Shape::cone: return "cone";
    case Shape::ellipsoid: return "ellipsoid";
  }
  return "?";
}

Shape shape_from_string(const std::string& s) {
  for (Shape sh : {Shape::sphere, Shape::box, Shape::cylinder, Shape::torus, Shape::cone, Shape::ellipsoid})
    if (to_string(sh) == s) return sh;
  throw ArgumentError("unknown shape '" + s + "'");
}

std::string to_string(DefectKind k) {
  switch (k) {
    case DefectKind::bump: return "bump";
    case DefectKind::dent: return "dent";
    case DefectKind::hole: return "hole";
    case DefectKind::noise_patch: return "noise_patch";
  }
  return "?";
}

DefectKind defect_from_string(const std::string& s) {
  for (DefectKind k : {DefectKind::bump, DefectKind::dent, DefectKind::hole, DefectKind::noise_patch})
    if (to_string(k) == s) return k;
  throw ArgumentError("unknown defect kind '" + s + "'");
}

void validate(const CategorySpec& spec) {
  if (spec.points_per_cloud < 64) throw ArgumentError("points_per_cloud must be at least 64");
  if (!(spec.jitter_sigma >= 0.0)) throw ArgumentError("jitter_sigma must be non-negative");
}

void validate(const DefectSpec& spec) {
  if (!(spec.amplitude > 0.0)) throw ArgumentError("defect amplitude must be positive");
  if (!(spec.extent > 0.0 && spec.extent < 0.5)) throw ArgumentError("defect extent must lie in (0, 0.5)");
}

double object_radius(Shape shape) {
  switch (shape) {
    case Shape::sphere: return 1.0;
    case Shape::box: return std::sqrt(kBoxHalf[0] * kBoxHalf[0] + kBoxHalf[1] * kBoxHalf[1] + kBoxHalf[2] * kBoxHalf[2]);
    case Shape::cylinder: return std::hypot(kCylRadius, kCylHalfHeight);
    case Shape::torus: return kTorusMajor + kTorusMinor;
    case Shape::cone: return std::max(std::hypot(kConeRadius, kConeBase), kConeApex);
    case Shape::ellipsoid: return kEllipsoid[0];
  }
  return 1.0;
}

PointCloud generate_normal(const CategorySpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  const double sigma = spec.jitter_sigma * object_radius(spec.shape);
  PointCloud cloud;
  cloud.points.resize(spec.points_per_cloud, 3);
  for (Eigen::Index i = 0; i < spec.points_per_cloud; ++i) {
    Point3 p = sample_surface(spec.shape, rng);
    if (sigma > 0.0) p += Point3(truncated_normal(rng, sigma), truncated_normal(rng, sigma), truncated_normal(rng, sigma));
    cloud.points.row(i) = p.transpose();
  }
  if (spec.pose_randomization) {
    std::normal_distribution<double> nd;
    Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
    q.normalize();
    cloud.points = (cloud.points * q.toRotationMatrix().transpose()).eval();
  }
  cloud.label = ObjectLabel::normal;
  return cloud;
}

double defect_region_radius(const DefectSpec& defect, double r) {
  return 2.0 * r * std::sin(kPi * defect.extent / 2.0);
}

PointCloud inject_defect(const PointCloud& cloud, const DefectSpec& defect, std::uint64_t seed) {
  validate(cloud);
  validate(defect);
  if (cloud.label != ObjectLabel::normal) throw ArgumentError("defects are injected into normal clouds only");

  Rng rng(seed);
  const Eigen::Index n = cloud.size();
  const Eigen::RowVector3d centroid = cloud.points.colwise().mean();
  const double radius = (cloud.points.rowwise() - centroid).rowwise().norm().maxCoeff();
  const double region = defect_region_radius(defect, radius);
  const Eigen::Index center_idx = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  const Eigen::RowVector3d center = cloud.points.row(center_idx);
  const VectorXd dist = (cloud.points.rowwise() - center).rowwise().norm();

  Eigen::Index in_region = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (dist(i) <= region) ++in_region;
  if (in_region < 2) throw ArgumentError("defect region holds fewer than 2 points; extent too small for this density");

  PointCloud out;
  out.label = ObjectLabel::anomalous;
  std::vector<std::uint8_t> labels;
  const double shift = defect.amplitude * radius;

  if (defect.kind == DefectKind::hole) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i)
      if (dist(i) > region) keep.push_back(i);
    out.points = gather_rows(cloud.points, keep);
    labels.resize(keep.size());
    // The removed region is marked by its boundary ring.
    for (std::size_t k = 0; k < keep.size(); ++k) labels[k] = dist(keep[k]) <= 1.25 * region ? 1 : 0;
  } else {
    out.points = cloud.points;
    labels.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dist(i) > region) continue;
      labels[static_cast<std::size_t>(i)] = 1;
      const Eigen::RowVector3d p = cloud.points.row(i);
      if (defect.kind == DefectKind::noise_patch) {
        const Eigen::RowVector3d noise(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
        out.points.row(i) = p + shift * noise;
        continue;
      }
      const Eigen::RowVector3d radial = p - centroid;
      const double rn = radial.norm();
      if (rn == 0.0) continue;
      const double falloff = 0.5 * (1.0 + std::cos(kPi * dist(i) / region));
      const double sign = defect.kind == DefectKind::bump ? 1.0 : -1.0;
      out.points.row(i) = p + sign * shift * falloff * radial / rn;
    }
  }
  out.point_labels = std::move(labels);
  return out;
}

std::vector<CategorySpec> default_categories(Eigen::Index points_per_cloud, double jitter) {
  std::vector<CategorySpec> out;
  for (Shape s : {Shape::sphere, Shape::box, Shape::cylinder, Shape::torus, Shape::cone, Shape::ellipsoid}) {
    CategorySpec c;
    c.shape = s;
    c.points_per_cloud = points_per_cloud;
    c.jitter_sigma = jitter;
    out.push_back(c);
  }
  return out;
}

std::vector<DefectSpec> default_defects(double amplitude, double extent) {
  std::vector<DefectSpec> out;
  for (DefectKind k : {DefectKind::bump, DefectKind::dent, DefectKind::noise_patch, DefectKind::hole})
    out.push_back({k, amplitude, extent});
  return out;
}

std::vector<std::vector<std::size_t>> contiguous_partition(std::size_t categories, std::size_t tasks) {
  if (tasks == 0 || categories < tasks || categories % tasks != 0)
    throw ArgumentError("categories must split evenly into a positive number of tasks");
  std::vector<std::vector<std::size_t>> out(tasks);
  const std::size_t per = categories / tasks;
  for (std::size_t c = 0; c < categories; ++c) out[c / per].push_back(c);
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finalizer over a running combination.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

TaskStream build_task_stream(const std::vector<CategorySpec>& categories,
                             const std::vector<std::vector<std::size_t>>& partition, const StreamSizes& sizes,
                             const std::vector<DefectSpec>& defects, std::uint64_t seed) {
  if (partition.empty()) throw ArgumentError("task stream needs at least one task");
  if (defects.empty() && sizes.anomalous_test > 0) throw ArgumentError("anomalous test clouds need a defect list");
  if (sizes.train_per_category < 0 || sizes.normal_test < 0 || sizes.anomalous_test < 0)
    throw ArgumentError("negative split size");
  std::set<std::size_t> seen;
  std::set<std::string> names;
  for (const auto& task : partition) {
    if (task.empty()) throw ArgumentError("empty task in partition");
    for (std::size_t c : task) {
      if (c >= categories.size()) throw ArgumentError("partition references an unknown category");
      if (!seen.insert(c).second) throw ArgumentError("partition is not disjoint");
    }
  }
  if (seen.size() != categories.size()) throw ArgumentError("partition does not cover every category");
  for (const auto& c : categories) {
    validate(c);
    if (!names.insert(c.label()).second) throw ArgumentError("duplicate category name '" + c.label() + "'");
  }
  for (const auto& d : defects) validate(d);

  TaskStream stream;
  std::vector<Sample> cumulative_test;
  for (std::size_t t = 0; t < partition.size(); ++t) {
    Task task;
    task.id = static_cast<int>(t + 1);
    for (std::size_t c : partition[t]) {
      const CategorySpec& spec = categories[c];
      const std::string cat = spec.label();
      task.categories.push_back(cat);
      auto make = [&](const std::string& split, int idx, std::uint64_t split_code) {
        Sample s;
        s.category = cat;
        s.task = task.id;
        s.split = split;
        s.seed = mix_seed(seed, c, split_code, static_cast<std::uint64_t>(idx));
        return s;
      };
      for (int i = 0; i < sizes.train_per_category; ++i) {
        Sample s = make("train", i, 0);
        s.id = cat + "/train_" + std::to_string(i);
        s.cloud = std::make_shared<const PointCloud>(generate_normal(spec, s.seed));
        task.train.push_back(std::move(s));
      }
      for (int i = 0; i < sizes.normal_test; ++i) {
        Sample s = make("test", i, 1);
        s.id = cat + "/good_" + std::to_string(i);
        s.cloud = std::make_shared<const PointCloud>(generate_normal(spec, s.seed));
        cumulative_test.push_back(std::move(s));
      }
      for (int i = 0; i < sizes.anomalous_test; ++i) {
        Sample s = make("test", i, 2);
        s.id = cat + "/defect_" + std::to_string(i);
        const DefectSpec& d = defects[static_cast<std::size_t>(i) % defects.size()];
        const PointCloud base = generate_normal(spec, s.seed);
        s.label = ObjectLabel::anomalous;
        s.defect = d;
        s.cloud = std::make_shared<const PointCloud>(inject_defect(base, d, mix_seed(s.seed, 7)));
        cumulative_test.push_back(std::move(s));
      }
    }
    task.test = cumulative_test;
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

}  // namespace ckad
