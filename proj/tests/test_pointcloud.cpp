#include "ckad/cloud_io.hpp"
#include "ckad/log.hpp"
#include "ckad/pointcloud.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace ckad {
namespace {

Points line_points(int count) {
  Points p = Points::Zero(count, 3);
  for (int i = 0; i < count; ++i) p(i, 0) = i;
  return p;
}

Points random_points(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Points p(count, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = nd(rng);
  return p;
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ckad_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TEST(Normalize, TwoPointExample) {
  PointCloud c;
  c.points = Points(2, 3);
  c.points << 2, 0, 0, 4, 0, 0;
  const PointCloud n = normalize_cloud(c);
  EXPECT_DOUBLE_EQ(n.points(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(n.points(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(n.points.col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Normalize, SinglePointIsDegenerate) {
  PointCloud c;
  c.points = Points(1, 3);
  c.points << 5, 5, 5;
  EXPECT_THROW(normalize_cloud(c), DegenerateError);
}

TEST(Normalize, UnitCubeCorners) {
  PointCloud c;
  c.points = Points(8, 3);
  for (int i = 0; i < 8; ++i) c.points.row(i) << (i & 1), (i >> 1) & 1, (i >> 2) & 1;
  // centroid (1/2, 1/2, 1/2); every corner sits at distance sqrt(3)/2 from it
  const double scale = std::sqrt(3.0) / 2.0;
  const PointCloud n = normalize_cloud(c);
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(n.points(i, k), (c.points(i, k) - 0.5) / scale, 1e-15);
  EXPECT_NEAR(n.points.rowwise().norm().maxCoeff(), 1.0, 1e-15);
  EXPECT_NEAR(n.points.colwise().mean().norm(), 0.0, 1e-15);
}

TEST(Normalize, IsIdempotentAndPreservesLabels) {
  PointCloud c;
  c.points = random_points(200, 3) * 7.0;
  c.points.col(1).array() += 4.0;
  c.label = ObjectLabel::anomalous;
  c.point_labels = std::vector<std::uint8_t>(200, 0);
  (*c.point_labels)[5] = 1;
  const PointCloud a = normalize_cloud(c);
  const PointCloud b = normalize_cloud(a);
  EXPECT_LE((a.points - b.points).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(a.label, ObjectLabel::anomalous);
  ASSERT_TRUE(a.point_labels.has_value());
  EXPECT_EQ((*a.point_labels)[5], 1);
}

TEST(Normalize, IsASimilarityTransform) {
  PointCloud c;
  c.points = random_points(50, 4);
  const PointCloud n = normalize_cloud(c);
  const double ratio = (n.points.row(0) - n.points.row(1)).norm() / (c.points.row(0) - c.points.row(1)).norm();
  for (int i = 2; i < 50; ++i)
    EXPECT_NEAR((n.points.row(i) - n.points.row(0)).norm() / (c.points.row(i) - c.points.row(0)).norm(), ratio, 1e-12);
}

TEST(Validate, RejectsBadClouds) {
  PointCloud empty;
  EXPECT_THROW(validate(empty), ArgumentError);
  PointCloud nan;
  nan.points = Points::Zero(2, 3);
  nan.points(1, 2) = std::nan("");
  EXPECT_THROW(validate(nan), ArgumentError);
  PointCloud mismatch;
  mismatch.points = Points::Zero(3, 3);
  mismatch.point_labels = std::vector<std::uint8_t>(2, 0);
  EXPECT_THROW(validate(mismatch), ArgumentError);
}

// Independent greedy max-min enumeration.
std::vector<Eigen::Index> brute_fps(const Points& p, Eigen::Index n, Eigen::Index first) {
  std::vector<Eigen::Index> chosen{first};
  while (static_cast<Eigen::Index>(chosen.size()) < n) {
    Eigen::Index best = -1;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (auto c : chosen) dmin = std::min(dmin, (p.row(i) - p.row(c)).norm());
      if (dmin > best_d) {
        best_d = dmin;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

TEST(Fps, CollinearExample) {
  const Points p = line_points(11);
  const auto picks = fps_sample_from(p, 3, 0);
  EXPECT_EQ(picks, (std::vector<Eigen::Index>{0, 10, 5}));
  EXPECT_EQ(picks, brute_fps(p, 3, 0));
}

TEST(Fps, MatchesBruteForceOnRandomClouds) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Points p = random_points(60, 100 + s);
    EXPECT_EQ(fps_sample_from(p, 12, static_cast<Eigen::Index>(s)), brute_fps(p, 12, static_cast<Eigen::Index>(s)));
  }
}

TEST(Fps, SecondPickIsFarthestFromFirst) {
  const Points p = random_points(40, 9);
  const auto picks = fps_sample(p, 2, 17);
  Eigen::Index far = 0;
  (p.rowwise() - p.row(picks[0])).rowwise().norm().maxCoeff(&far);
  EXPECT_EQ(picks[1], far);
}

TEST(Fps, FullSampleIsAPermutation) {
  const Points p = random_points(30, 2);
  auto picks = fps_sample(p, 30, 5);
  std::sort(picks.begin(), picks.end());
  for (Eigen::Index i = 0; i < 30; ++i) EXPECT_EQ(picks[static_cast<std::size_t>(i)], i);
}

TEST(Fps, DeterministicAndRejectsOversample) {
  const Points p = random_points(30, 2);
  EXPECT_EQ(fps_sample(p, 10, 3), fps_sample(p, 10, 3));
  EXPECT_THROW(fps_sample(p, 31, 3), ArgumentError);
  EXPECT_THROW(fps_sample(p, 1, 3), ArgumentError);
}

TEST(Fps, MinDistanceIsNonIncreasing) {
  const Points p = random_points(300, 11);
  const auto picks = fps_sample(p, 40, 1);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k <= picks.size(); ++k) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) dmin = std::min(dmin, (p.row(picks[i]) - p.row(picks[j])).norm());
    EXPECT_LE(dmin, previous);
    previous = dmin;
  }
}

TEST(Radius, TwoCenters) {
  Points c(2, 3);
  c << 0, 0, 0, 1, 0, 0;
  const VectorXd r = adaptive_radius(c, 10.0);
  EXPECT_DOUBLE_EQ(r(0), 5.0);
  EXPECT_DOUBLE_EQ(r(1), 5.0);
}

TEST(Radius, ZeroEtaGivesZeroRadii) {
  EXPECT_EQ(adaptive_radius(random_points(5, 1), 0.0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Radius, UnitSquareCorners) {
  Points c(4, 3);
  c << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  const VectorXd r = adaptive_radius(c, 1.0);
  const double expected = (0.0 + 1.0 + 1.0 + std::sqrt(2.0)) / 4.0;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r(i), expected, 1e-15);
}

TEST(Radius, ScaleEquivariance) {
  const Points c = random_points(20, 5);
  for (double s : {0.5, 3.0, 1e3}) {
    const VectorXd a = adaptive_radius(c, 2.0);
    const VectorXd b = adaptive_radius(Points(c * s), 2.0);
    EXPECT_LE((b - s * a).cwiseAbs().maxCoeff(), 1e-12 * s * a.maxCoeff());
  }
}

TEST(Radius, GlobalModeUsesOneSharedRadius) {
  const Points c = random_points(10, 8);
  const VectorXd per = adaptive_radius(c, 1.0);
  const VectorXd glob = adaptive_radius(c, 1.0, RadiusMode::global);
  for (Eigen::Index i = 0; i < 10; ++i) EXPECT_NEAR(glob(i), per.mean(), 1e-14);
}

TEST(Group, CloudEqualsCentersWithSizeOne) {
  const Points p = random_points(6, 3);
  const GroupedCloud g = group_points(p, p, VectorXd::Constant(6, 0.1), 1);
  EXPECT_EQ(g.members.rows(), 6);
  EXPECT_EQ(g.members.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Group, LineExampleWithCyclicPadding) {
  const Points p = line_points(11);
  Points center = Points::Zero(1, 3);
  center(0, 0) = 5;
  const GroupedCloud g = group_points(p, center, VectorXd::Constant(1, 2.5), 8);
  // within 2.5 of x = 5: {3, 4, 5, 6, 7}; by (distance, index): 5, 4, 6, 3, 7; then repeat from the nearest
  const std::vector<double> expected{0, -1, 1, -2, 2, 0, -1, 1};
  ASSERT_EQ(g.members.rows(), 8);
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(g.members(i, 0), expected[static_cast<std::size_t>(i)]);
  EXPECT_EQ(g.in_radius_count[0], 5);
  EXPECT_FALSE(g.knn_fallback[0]);
}

TEST(Group, ZeroRadiusFallsBackToNearestNeighbours) {
  const Points p = random_points(40, 21);
  const Points centers = gather_rows(p, {0, 1, 2});
  log::ScopedCapture cap;
  const GroupedCloud g = group_points(p, centers, VectorXd::Zero(3), 5);
  EXPECT_EQ(cap.count("knn_fallback"), 3u);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_TRUE(g.knn_fallback[static_cast<std::size_t>(i)]);
    std::vector<double> d(40);
    for (int j = 0; j < 40; ++j) d[static_cast<std::size_t>(j)] = (p.row(j) - centers.row(i)).norm();
    std::sort(d.begin(), d.end());
    for (Eigen::Index k = 0; k < 5; ++k) EXPECT_NEAR(g.group(i).row(k).norm(), d[static_cast<std::size_t>(k)], 1e-12);
  }
}

TEST(Group, MembersRespectRadiusAndCompleteness) {
  const Points p = random_points(500, 13);
  const auto idx = fps_sample(p, 16, 2);
  const Points centers = gather_rows(p, idx);
  const VectorXd r = adaptive_radius(centers, 0.3);
  Eigen::Index max_count = 0;
  for (Eigen::Index i = 0; i < 16; ++i)
    max_count = std::max(max_count, Eigen::Index(((p.rowwise() - centers.row(i)).rowwise().norm().array() <= r(i)).count()));
  const GroupedCloud g = group_points(p, centers, r, max_count);
  const double diameter = 2.0 * p.rowwise().norm().maxCoeff();
  for (Eigen::Index i = 0; i < 16; ++i) {
    const auto grp = g.group(i);
    for (Eigen::Index k = 0; k < grp.rows(); ++k) EXPECT_LE(grp.row(k).norm(), r(i) + 1e-9 * diameter);
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      if ((p.row(j) - centers.row(i)).norm() > r(i)) continue;
      bool found = false;
      for (Eigen::Index k = 0; k < grp.rows() && !found; ++k)
        found = (grp.row(k) - (p.row(j) - centers.row(i))).norm() == 0.0;
      EXPECT_TRUE(found) << "point " << j << " missing from group " << i;
    }
  }
}

TEST(Group, MakeGroupsShapes) {
  PointCloud c;
  c.points = random_points(400, 1);
  GroupingConfig cfg;
  cfg.num_groups = 32;
  cfg.group_size = 8;
  const GroupedCloud g = make_groups(c, cfg);
  EXPECT_EQ(g.num_groups(), 32);
  EXPECT_EQ(g.members.rows(), 32 * 8);
  EXPECT_EQ(g.radii.size(), 32);
}

TEST(CloudIo, PlyRoundTrip) {
  PointCloud c;
  c.points = random_points(100, 7);
  write_cloud(c, temp_file("rt.ply"));
  const PointCloud r = read_cloud(temp_file("rt.ply"));
  ASSERT_EQ(r.points.rows(), 100);
  for (Eigen::Index i = 0; i < c.points.size(); ++i)
    EXPECT_EQ(r.points.data()[i], static_cast<double>(static_cast<float>(c.points.data()[i])));
}

TEST(CloudIo, PlyRoundTripKeepsPointLabels) {
  PointCloud c;
  c.points = random_points(10, 8);
  c.point_labels = std::vector<std::uint8_t>{0, 1, 0, 0, 1, 1, 0, 0, 0, 1};
  write_cloud(c, temp_file("labels.ply"));
  const PointCloud r = read_cloud(temp_file("labels.ply"));
  ASSERT_TRUE(r.point_labels.has_value());
  EXPECT_EQ(*r.point_labels, *c.point_labels);
}

TEST(CloudIo, XyzRoundTripAndComments) {
  PointCloud c;
  c.points = random_points(100, 9);
  write_cloud(c, temp_file("rt.xyz"));
  const PointCloud r = read_cloud(temp_file("rt.xyz"));
  for (Eigen::Index i = 0; i < c.points.size(); ++i)
    EXPECT_NEAR(r.points.data()[i], c.points.data()[i], 1e-7 * std::max(1.0, std::abs(c.points.data()[i])));
  {
    std::ofstream out(temp_file("comment.xyz"));
    out << "# header comment\n1 2 3\n\n# another\n4 5 6\n";
  }
  const PointCloud k = read_cloud(temp_file("comment.xyz"));
  ASSERT_EQ(k.points.rows(), 2);
  EXPECT_EQ(k.points(1, 2), 6.0);
}

TEST(CloudIo, XyzMalformedLineReportsLineNumber) {
  {
    std::ofstream out(temp_file("bad.xyz"));
    out << "1 2 3\n4 five 6\n";
  }
  try {
    read_cloud(temp_file("bad.xyz"));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 2u);
  }
  {
    std::ofstream out(temp_file("empty.xyz"));
    out << "# nothing here\n";
  }
  EXPECT_THROW(read_cloud(temp_file("empty.xyz")), ParseError);
}

TEST(CloudIo, PlyErrors) {
  {
    std::ofstream out(temp_file("zero.ply"), std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
           "property float z\nend_header\n";
  }
  EXPECT_THROW(read_cloud(temp_file("zero.ply")), ParseError);
  {
    std::ofstream out(temp_file("layout.ply"), std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double x\nproperty double y\n"
           "property double z\nend_header\n";
  }
  EXPECT_THROW(read_cloud(temp_file("layout.ply")), ParseError);
  PointCloud c;
  c.points = random_points(10, 1);
  write_cloud(c, temp_file("trunc.ply"));
  std::filesystem::resize_file(temp_file("trunc.ply"), std::filesystem::file_size(temp_file("trunc.ply")) - 5);
  try {
    read_cloud(temp_file("trunc.ply"));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

}  // namespace
}  // namespace ckad
