#include "ckad/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

namespace ckad {
namespace {

CategorySpec spec(Shape s, Eigen::Index points, double jitter) {
  CategorySpec c;
  c.shape = s;
  c.points_per_cloud = points;
  c.jitter_sigma = jitter;
  return c;
}

TEST(Generate, SphereWithoutJitterHasUnitNorms) {
  const PointCloud c = generate_normal(spec(Shape::sphere, 1000, 0.0), 1);
  ASSERT_EQ(c.size(), 1000);
  EXPECT_LE((c.points.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-6);
  EXPECT_EQ(c.label, ObjectLabel::normal);
}

TEST(Generate, DeterministicPerSeed) {
  for (Shape s : {Shape::sphere, Shape::box, Shape::cylinder, Shape::torus, Shape::cone, Shape::ellipsoid}) {
    CategorySpec c = spec(s, 500, 0.01);
    c.pose_randomization = true;
    const PointCloud a = generate_normal(c, 42);
    const PointCloud b = generate_normal(c, 42);
    EXPECT_TRUE((a.points.array() == b.points.array()).all()) << to_string(s);
    EXPECT_FALSE((a.points.array() == generate_normal(c, 43).points.array()).all()) << to_string(s);
  }
}

TEST(Generate, BoxPointsLieOnFaces) {
  const double jitter = 0.002;
  const PointCloud c = generate_normal(spec(Shape::box, 4000, jitter), 5);
  const double half[3] = {1.0, 0.7, 0.5};
  const double tol = 3.0 * jitter * object_radius(Shape::box);
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
      // plane x_axis = +-half[axis], with the point inside the face rectangle
      bool inside = true;
      for (int o = 0; o < 3; ++o)
        if (o != axis && std::abs(c.points(i, o)) > half[o] + tol) inside = false;
      if (inside) best = std::min(best, std::abs(std::abs(c.points(i, axis)) - half[axis]));
    }
    EXPECT_LE(best, tol) << "point " << i;
  }
}

TEST(Generate, RejectsInvalidSpecs) {
  EXPECT_THROW(generate_normal(spec(Shape::sphere, 10, 0.0), 1), ArgumentError);
  EXPECT_THROW(generate_normal(spec(Shape::sphere, 100, -0.1), 1), ArgumentError);
  EXPECT_THROW(validate(DefectSpec{DefectKind::bump, 0.0, 0.1}), ArgumentError);
  EXPECT_THROW(validate(DefectSpec{DefectKind::bump, 0.2, 0.5}), ArgumentError);
  EXPECT_THROW(validate(DefectSpec{DefectKind::bump, 0.2, 0.0}), ArgumentError);
}

TEST(Defect, BumpMaxNormMatchesFalloffPeak) {
  const PointCloud c = generate_normal(spec(Shape::sphere, 8192, 0.002), 3);
  const PointCloud d = inject_defect(c, DefectSpec{DefectKind::bump, 0.2, 0.1}, 4);
  EXPECT_EQ(d.label, ObjectLabel::anomalous);
  // cosine falloff peaks at 1 at the region center: 1 + 0.2
  EXPECT_NEAR(d.points.rowwise().norm().maxCoeff(), 1.2, 0.02 * 1.2);
}

TEST(Defect, HoleRemovesExactlyARegion) {
  const PointCloud c = generate_normal(spec(Shape::sphere, 8192, 0.002), 7);
  const DefectSpec hole{DefectKind::hole, 0.2, 0.1};
  const PointCloud d = inject_defect(c, hole, 8);
  ASSERT_LT(d.size(), c.size());
  // kept points are bit-identical copies; recover the removed set by matching
  std::set<std::tuple<double, double, double>> kept;
  for (Eigen::Index i = 0; i < d.size(); ++i) kept.insert({d.points(i, 0), d.points(i, 1), d.points(i, 2)});
  std::vector<Eigen::Index> removed;
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (!kept.count({c.points(i, 0), c.points(i, 1), c.points(i, 2)})) removed.push_back(i);
  ASSERT_EQ(static_cast<Eigen::Index>(removed.size()), c.size() - d.size());
  const Eigen::RowVector3d centroid = c.points.colwise().mean();
  const double rho = defect_region_radius(hole, (c.points.rowwise() - centroid).rowwise().norm().maxCoeff());
  // some cloud point serves as region center: removed == {p : |p - center| <= rho}
  bool witnessed = false;
  for (Eigen::Index ci = 0; ci < c.size() && !witnessed; ++ci) {
    std::size_t inside = 0;
    bool all_removed_inside = true;
    for (auto r : removed) all_removed_inside = all_removed_inside && (c.points.row(r) - c.points.row(ci)).norm() <= rho;
    if (!all_removed_inside) continue;
    for (Eigen::Index j = 0; j < c.size(); ++j) inside += (c.points.row(j) - c.points.row(ci)).norm() <= rho ? 1 : 0;
    witnessed = inside == removed.size();
  }
  EXPECT_TRUE(witnessed);
  ASSERT_TRUE(d.point_labels.has_value());
  EXPECT_GT(std::count(d.point_labels->begin(), d.point_labels->end(), 1), 0);
}

TEST(Defect, PointsOutsideRegionAreUnchanged) {
  const PointCloud c = generate_normal(spec(Shape::torus, 4096, 0.002), 11);
  for (DefectKind k : {DefectKind::bump, DefectKind::dent, DefectKind::noise_patch}) {
    const PointCloud d = inject_defect(c, DefectSpec{k, 0.2, 0.1}, 12);
    ASSERT_EQ(d.size(), c.size());
    ASSERT_TRUE(d.point_labels.has_value());
    Eigen::Index changed = 0;
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const bool same = (c.points.row(i).array() == d.points.row(i).array()).all();
      if ((*d.point_labels)[static_cast<std::size_t>(i)] == 0) {
        EXPECT_TRUE(same) << to_string(k) << " point " << i;
      }
      changed += same ? 0 : 1;
    }
    EXPECT_GT(changed, 0) << to_string(k);
  }
}

TEST(Defect, VanishingAmplitudeLeavesCloudAlmostUnchanged) {
  const double jitter = 0.002;
  const PointCloud c = generate_normal(spec(Shape::sphere, 2048, jitter), 5);
  const PointCloud d = inject_defect(c, DefectSpec{DefectKind::bump, 1e-9, 0.1}, 6);
  EXPECT_LE((d.points - c.points).cwiseAbs().maxCoeff(), jitter);
}

TEST(Defect, RejectsAnomalousInputAndEmptyRegion) {
  PointCloud c = generate_normal(spec(Shape::sphere, 64, 0.0), 5);
  EXPECT_THROW(inject_defect(c, DefectSpec{DefectKind::bump, 0.2, 1e-4}, 1), ArgumentError);
  c.label = ObjectLabel::anomalous;
  EXPECT_THROW(inject_defect(c, DefectSpec{DefectKind::bump, 0.2, 0.1}, 1), ArgumentError);
}

TaskStream small_stream(std::size_t tasks, std::uint64_t seed = 1) {
  auto cats = default_categories(256, 0.002);
  cats.resize(tasks * 2);
  return build_task_stream(cats, contiguous_partition(cats.size(), tasks), StreamSizes{3, 2, 2}, default_defects(),
                           seed);
}

TEST(Stream, ThreeTasksNestAndPartition) {
  const TaskStream s = small_stream(3);
  ASSERT_EQ(s.tasks.size(), 3u);
  std::set<std::string> seen_train;
  for (std::size_t t = 0; t < 3; ++t) {
    const Task& task = s.tasks[t];
    EXPECT_EQ(task.categories.size(), 2u);
    for (const auto& x : task.train) {
      EXPECT_EQ(x.label, ObjectLabel::normal);
      EXPECT_EQ(x.task, task.id);
      EXPECT_TRUE(seen_train.insert(x.id).second) << "train sample reused: " << x.id;
    }
    std::set<std::string> cats;
    for (const auto& x : task.test) cats.insert(x.category);
    EXPECT_EQ(cats.size(), 2 * (t + 1));
    if (t > 0) {
      std::set<std::string> ids;
      for (const auto& x : task.test) ids.insert(x.id);
      for (const auto& x : s.tasks[t - 1].test) EXPECT_TRUE(ids.count(x.id)) << x.id;
    }
    const auto anomalous = std::count_if(task.test.begin(), task.test.end(),
                                         [](const Sample& x) { return x.label == ObjectLabel::anomalous; });
    EXPECT_GT(anomalous, 0);
    EXPECT_LT(static_cast<std::size_t>(anomalous), task.test.size());
  }
}

TEST(Stream, SingleTaskIsPlainSplit) {
  const TaskStream s = small_stream(1);
  ASSERT_EQ(s.tasks.size(), 1u);
  EXPECT_EQ(s.tasks[0].train.size(), 6u);
  EXPECT_EQ(s.tasks[0].test.size(), 8u);
}

TEST(Stream, DeterministicInSeed) {
  const TaskStream a = small_stream(2, 5), b = small_stream(2, 5);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < a.tasks[t].test.size(); ++i)
      EXPECT_TRUE((a.tasks[t].test[i].cloud->points.array() == b.tasks[t].test[i].cloud->points.array()).all());
}

TEST(Stream, RejectsBadPartitions) {
  const auto cats = default_categories(256, 0.002);
  EXPECT_THROW(build_task_stream(cats, {{0, 1}, {1, 2}, {3, 4, 5}}, {}, default_defects(), 1), ArgumentError);
  EXPECT_THROW(build_task_stream(cats, {{0, 1}, {}, {2, 3, 4, 5}}, {}, default_defects(), 1), ArgumentError);
  EXPECT_THROW(build_task_stream(cats, {{0, 1}, {2, 3}}, {}, default_defects(), 1), ArgumentError);
}

}  // namespace
}  // namespace ckad
