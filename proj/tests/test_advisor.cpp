#include "ckad/advisor.hpp"
#include "ckad/feature_map.hpp"

#include <gtest/gtest.h>

#include <random>

namespace ckad {
namespace {

MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

AdvisorState random_state(Eigen::Index d, Eigen::Index m, std::mt19937_64& rng, double alpha = 0.7, double beta = 0.7) {
  AdvisorState st(d, m, alpha, beta);
  st.s = gaussian(d, m, rng, 0.5);
  return st;
}

// Feature rows from an actual map over moderate keys.
MatrixXd key_features(Eigen::Index n, Eigen::Index m, std::mt19937_64& rng) {
  const RandomFeatureMap<double> map(4, m, rng());
  MatrixXd k = gaussian(n, 4, rng);
  k.rowwise().normalize();
  return phi_rows(k, map);
}

// Single-token rule written as gradient descent.
MatrixXd gradient_form(const AdvisorState& st, const MatrixXd& phi, const MatrixXd& v) {
  MatrixXd step = MatrixXd::Zero(st.dim(), st.features());
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const VectorXd p = phi.row(i).transpose();
    step += (st.s * p) * p.transpose() - (1.0 + st.alpha) * v.row(i).transpose() * p.transpose();
  }
  return st.s - st.beta * step / static_cast<double>(phi.rows());
}

TEST(KaaLoss, Examples) {
  std::mt19937_64 rng(1);
  AdvisorState st(3, 5);
  const VectorXd phi = gaussian(5, 1, rng).cwiseAbs();
  const VectorXd v = gaussian(3, 1, rng);
  EXPECT_DOUBLE_EQ(kaa_loss(st, phi, v), 0.5 * v.squaredNorm());

  // S phi = v via a rank-1 state
  st.s = v * phi.transpose() / phi.squaredNorm();
  EXPECT_NEAR(kaa_loss(st, phi, v), -st.alpha * v.squaredNorm(), 1e-12);

  AdvisorState plain = random_state(3, 5, rng, 0.0);
  EXPECT_NEAR(kaa_loss(plain, phi, v), 0.5 * (plain.s * phi - v).squaredNorm(), 1e-12);
  EXPECT_THROW(kaa_loss(st, VectorXd(VectorXd::Ones(4)), v), ArgumentError);
}

TEST(KaaGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    AdvisorState st = random_state(4, 6, rng);
    const VectorXd phi = gaussian(6, 1, rng).cwiseAbs();
    const VectorXd v = gaussian(4, 1, rng);
    const MatrixXd g = kaa_gradient(st, phi, v);
    ASSERT_EQ(g.rows(), 4);
    ASSERT_EQ(g.cols(), 6);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      AdvisorState p = st, m = st;
      p.s.data()[i] += h;
      m.s.data()[i] -= h;
      const double num = (kaa_loss(p, phi, v) - kaa_loss(m, phi, v)) / (2 * h);
      EXPECT_NEAR(g.data()[i], num, 1e-6 * std::max(1.0, std::abs(num)));
    }
  }
}

TEST(KaaGradient, StationaryPointAndZeroState) {
  std::mt19937_64 rng(3);
  AdvisorState st(3, 4);
  const VectorXd phi = gaussian(4, 1, rng).cwiseAbs();
  const VectorXd v = gaussian(3, 1, rng);
  EXPECT_LE((kaa_gradient(st, phi, v) + (1.0 + st.alpha) * v * phi.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  st.s = (1.0 + st.alpha) * v * phi.transpose() / phi.squaredNorm();
  EXPECT_LE(kaa_gradient(st, phi, v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KaaUpdate, ZeroBetaFreezesState) {
  std::mt19937_64 rng(4);
  AdvisorState st = random_state(3, 4, rng, 0.7, 0.0);
  const AdvisorState out = kaa_update(st, gaussian(5, 4, rng), gaussian(5, 3, rng));
  EXPECT_TRUE((out.s.array() == st.s.array()).all());
  EXPECT_EQ(out.update_count, 1u);
}

TEST(KaaUpdate, SingleTokenFromZero) {
  std::mt19937_64 rng(5);
  AdvisorState st(3, 4, 0.0, 1.0);
  const MatrixXd phi = gaussian(1, 4, rng).cwiseAbs();
  const MatrixXd v = gaussian(1, 3, rng);
  const AdvisorState out = kaa_update(st, phi, v);
  EXPECT_LE((out.s - v.transpose() * phi).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(KaaUpdate, DeltaRuleMatchesGradientForm) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 20);
    AdvisorState st = random_state(5, 7, rng, unit(rng), unit(rng));
    const MatrixXd phi = gaussian(n, 7, rng).cwiseAbs();
    const MatrixXd v = gaussian(n, 5, rng);
    const MatrixXd expected = gradient_form(st, phi, v);
    const MatrixXd got = kaa_update(st, phi, v).s;
    const double tol = n == 1 ? 1e-12 : 1e-10;
    EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), tol * std::max(1.0, expected.cwiseAbs().maxCoeff()));
  }
}

TEST(KaaUpdate, BatchOrderIndependent) {
  std::mt19937_64 rng(7);
  AdvisorState st = random_state(3, 6, rng);
  const MatrixXd phi = gaussian(8, 6, rng).cwiseAbs();
  const MatrixXd v = gaussian(8, 3, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(8);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 8, rng);
  const MatrixXd a = kaa_update(st, phi, v).s;
  const MatrixXd b = kaa_update(st, MatrixXd(perm * phi), MatrixXd(perm * v)).s;
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KaaUpdate, SmallBetaDescends) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> small(0.001, 0.1), unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    AdvisorState st = random_state(4, 16, rng, unit(rng), small(rng));
    const MatrixXd phi = key_features(1, 16, rng);
    const MatrixXd v = gaussian(1, 4, rng);
    const VectorXd p = phi.row(0).transpose(), vv = v.row(0).transpose();
    const double before = kaa_loss(st, p, vv);
    const double after = kaa_loss(kaa_update(st, phi, v), p, vv);
    EXPECT_LE(after, before + 1e-12) << "trial " << trial;
  }
}

TEST(KaaUpdate, FixedPoint) {
  std::mt19937_64 rng(9);
  AdvisorState st(3, 5, 0.4, 0.7);
  const MatrixXd phi = gaussian(1, 5, rng).cwiseAbs();
  const MatrixXd v = gaussian(1, 3, rng);
  st.s = (1.0 + st.alpha) * v.transpose() * phi / phi.squaredNorm();
  const AdvisorState out = kaa_update(st, phi, v);
  EXPECT_LE((out.s - st.s).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KaaUpdate, RetainsEarlierPopulation) {
  std::mt19937_64 rng(10);
  const Eigen::Index m = 32, d = 4;
  const RandomFeatureMap<double> map(3, m, 11);
  // two disjoint key clusters with distinct value targets
  MatrixXd ka = gaussian(20, 3, rng, 0.1), kb = gaussian(20, 3, rng, 0.1);
  ka.col(0).array() += 1.0;
  kb.col(1).array() += 1.0;
  const MatrixXd pa = phi_rows(ka, map), pb = phi_rows(kb, map);
  MatrixXd va = gaussian(20, d, rng, 0.1), vb = gaussian(20, d, rng, 0.1);
  va.col(0).array() += 1.0;
  vb.col(2).array() += 1.0;
  AdvisorState st(d, m, 0.7, 0.3);
  const AdvisorState zero = st;
  for (int i = 0; i < 5; ++i) st = kaa_update(st, pa, va);
  for (int i = 0; i < 5; ++i) st = kaa_update(st, pb, vb);
  double loss = 0.0, zero_loss = 0.0;
  for (Eigen::Index i = 0; i < 20; ++i) {
    loss += kaa_loss(st, pa.row(i).transpose(), va.row(i).transpose());
    zero_loss += kaa_loss(zero, pa.row(i).transpose(), va.row(i).transpose());
  }
  EXPECT_LT(loss, zero_loss);
  EXPECT_EQ(st.update_count, 10u);
}

TEST(KaaUpdate, RejectsNonFiniteAndBadShapes) {
  std::mt19937_64 rng(11);
  AdvisorState st = random_state(3, 4, rng);
  const MatrixXd before = st.s;
  MatrixXd v = gaussian(2, 3, rng);
  v(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(apply_kaa_update(st, MatrixXd(gaussian(2, 4, rng)), v), NumericError);
  EXPECT_TRUE((st.s.array() == before.array()).all());
  EXPECT_EQ(st.update_count, 0u);
  EXPECT_THROW(kaa_update(st, MatrixXd(0, 4), MatrixXd(0, 3)), ArgumentError);
  EXPECT_THROW(kaa_update(st, MatrixXd(2, 5), MatrixXd(2, 3)), ArgumentError);
  EXPECT_THROW(AdvisorState(3, 4, 1.5, 0.5), ArgumentError);
  EXPECT_THROW(AdvisorState(3, 4, 0.5, -0.1), ArgumentError);
}

TEST(KaaOutput, ZeroRankOneAndLinearity) {
  std::mt19937_64 rng(12);
  AdvisorState st(3, 5);
  const MatrixXd phi_q = gaussian(4, 5, rng).cwiseAbs();
  EXPECT_EQ(kaa_output(st, phi_q).cwiseAbs().maxCoeff(), 0.0);

  const VectorXd v = gaussian(3, 1, rng), pk = gaussian(5, 1, rng).cwiseAbs();
  st.s = v * pk.transpose();
  const MatrixXd out = kaa_output(st, phi_q);
  for (Eigen::Index l = 0; l < 4; ++l)
    EXPECT_LE((out.row(l).transpose() - v * pk.dot(phi_q.row(l).transpose())).norm(), 1e-12);

  st = random_state(3, 5, rng);
  const MatrixXd p2 = gaussian(4, 5, rng);
  const MatrixXd lhs = kaa_output(st, MatrixXd(2.0 * phi_q - 0.5 * p2));
  const MatrixXd rhs = 2.0 * kaa_output(st, phi_q) - 0.5 * kaa_output(st, p2);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KaaOutput, NormalizedVariantDividesByFeatureMass) {
  std::mt19937_64 rng(13);
  AdvisorState st = random_state(3, 5, rng);
  const MatrixXd phi_q = gaussian(4, 5, rng).cwiseAbs();
  const MatrixXd raw = kaa_output(st, phi_q);
  const MatrixXd norm = kaa_output(st, phi_q, true, 0.0);
  for (Eigen::Index l = 0; l < 4; ++l)
    EXPECT_LE((norm.row(l) * phi_q.row(l).sum() - raw.row(l)).norm(), 1e-12);
}

}  // namespace
}  // namespace ckad
