#include "ckad/checkpoint.hpp"
#include "ckad/model.hpp"
#include "ckad/synthgen.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace ckad {
namespace {

namespace fs = std::filesystem;

ModelHyper tiny_hyper() {
  ModelHyper h;
  h.d = 8;
  h.m = 8;
  h.blocks = 2;
  h.embed_hidden = 8;
  h.ffn_ratio = 2;
  h.num_groups = 6;
  h.group_size = 4;
  h.seed = 5;
  return h;
}

template <typename Scalar>
Matrix<Scalar> gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(nd(rng));
  return m;
}

template <typename Scalar>
void fill_advisors(Model<Scalar>& model, std::mt19937_64& rng) {
  for (auto& a : model.advisors()) a.s = gaussian<double>(a.dim(), a.features(), rng, 0.3);
}

GroupedCloud sample_groups(const ModelHyper& h, std::uint64_t seed) {
  CategorySpec spec;
  spec.points_per_cloud = 256;
  return make_groups(normalize_cloud(generate_normal(spec, seed)), h.grouping(seed));
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("ckad_test_" + name); }

TEST(Model, ZeroAdvisorAndFeedForwardIsIdentity) {
  Model<double> model(tiny_hyper());
  for (const auto& e : model.layout().entries())
    if (e.name.find("ff.w2") != std::string::npos || e.name.find("ff.b2") != std::string::npos)
      view(model.params(), e).setZero();
  std::mt19937_64 rng(1);
  const MatrixXd x = gaussian<double>(6, 8, rng);
  EXPECT_LE((model.forward(x, Mode::eval) - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Model, TokenPermutationEquivariance) {
  Model<double> model(tiny_hyper());
  std::mt19937_64 rng(2);
  fill_advisors(model, rng);
  const MatrixXd x = gaussian<double>(6, 8, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 6, rng);
  const MatrixXd a = perm * model.forward(x, Mode::eval);
  const MatrixXd b = model.forward(MatrixXd(perm * x), Mode::eval);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);

  ModelHyper lin = tiny_hyper();
  lin.use_kaa = false;
  Model<double> linear(lin);
  EXPECT_LE((perm * linear.forward(x, Mode::eval) - linear.forward(MatrixXd(perm * x), Mode::eval)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Model, GroupPermutationEquivariantEmbedding) {
  const ModelHyper h = tiny_hyper();
  Model<double> model(h);
  const GroupedCloud g = sample_groups(h, 3);
  GroupedCloud p = g;
  const std::vector<Eigen::Index> order{3, 0, 5, 1, 4, 2};
  for (Eigen::Index i = 0; i < 6; ++i) {
    p.centers.row(i) = g.centers.row(order[static_cast<std::size_t>(i)]);
    p.members.middleRows(i * h.group_size, h.group_size) = g.group(order[static_cast<std::size_t>(i)]);
  }
  const MatrixXd a = model.embed(g), b = model.embed(p);
  for (Eigen::Index i = 0; i < 6; ++i)
    EXPECT_LE((b.row(i) - a.row(order[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, WithinGroupPermutationLeavesTokensUnchanged) {
  const ModelHyper h = tiny_hyper();
  Model<double> model(h);
  const GroupedCloud g = sample_groups(h, 4);
  GroupedCloud p = g;
  for (Eigen::Index i = 0; i < 6; ++i) p.members.row(i * 4).swap(p.members.row(i * 4 + 3));
  EXPECT_LE((model.embed(g) - model.embed(p)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Model, PositionalEncodingSeparatesIdenticalGroups) {
  const ModelHyper h = tiny_hyper();
  Model<double> model(h);
  GroupedCloud g = sample_groups(h, 5);
  g.members.middleRows(4, 4) = g.members.middleRows(0, 4);
  const MatrixXd a = model.embed(g);
  EXPECT_GT((a.row(0) - a.row(1)).norm(), 1e-6);
  for (const auto& e : model.layout().entries())
    if (e.name.rfind("pos.", 0) == 0) view(model.params(), e).setZero();
  const MatrixXd b = model.embed(g);
  EXPECT_LE((b.row(0) - b.row(1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, EvalIsDeterministic) {
  ModelHyper h = tiny_hyper();
  Model<float> model(h);
  std::mt19937_64 rng(6);
  fill_advisors(model, rng);
  const MatrixXf x = gaussian<float>(6, 8, rng);
  const MatrixXf a = model.forward(x, Mode::eval), b = model.forward(x, Mode::eval);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(Model, EmbeddingIgnoresGlobalScale) {
  const ModelHyper h = tiny_hyper();
  const Model<double> model(h);
  const GroupedCloud g = sample_groups(h, 6);
  GroupedCloud s = g;
  s.centers *= 0.5;
  s.members *= 0.5;
  EXPECT_LE((model.embed(g) - model.embed(s)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, ForwardRejectsNonFiniteInput) {
  Model<double> model(tiny_hyper());
  MatrixXd x = MatrixXd::Zero(6, 8);
  x(2, 3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(model.forward(x, Mode::eval), NumericError);
}

TEST(Model, AdvisorsAndMapsAreNotTrainable) {
  const Model<double> model(tiny_hyper());
  for (const auto& e : model.layout().entries()) {
    EXPECT_EQ(e.name.find("advisor"), std::string::npos);
    EXPECT_EQ(e.name.find("proj"), std::string::npos);
  }
  EXPECT_EQ(model.advisors().size(), 2u);
  EXPECT_EQ(model.feature_map_seeds().size(), 3u);
}

TEST(ReconLoss, Examples) {
  std::mt19937_64 rng(7);
  const MatrixXd a = gaussian<double>(5, 4, rng), b = gaussian<double>(5, 4, rng);
  EXPECT_EQ(recon_loss(a, a), 0.0);
  EXPECT_NEAR(recon_loss(a, MatrixXd(a.array() + 0.3)), 0.09, 1e-15);
  EXPECT_DOUBLE_EQ(recon_loss(a, b), recon_loss(b, a));
  EXPECT_THROW(recon_loss(a, MatrixXd(a.topRows(3))), ArgumentError);
}

TEST(Gradients, ScaleLinearly) {
  Model<double> model(tiny_hyper());
  std::mt19937_64 rng(8);
  fill_advisors(model, rng);
  const MatrixXd x = gaussian<double>(6, 8, rng);
  ForwardCache<double> cache;
  const MatrixXd out = model.forward(model.params(), x, Mode::train, &cache);
  const MatrixXd d_out = 2.0 * (out - x) / static_cast<double>(x.size());
  VectorXd g1 = VectorXd::Zero(model.params().size()), g3 = g1;
  model.backward(model.params(), cache, d_out, g1);
  model.backward(model.params(), cache, MatrixXd(3.0 * d_out), g3);
  EXPECT_LE((g3 - 3.0 * g1).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, g1.cwiseAbs().maxCoeff()));
  EXPECT_GT(g1.norm(), 0.0);
}

TEST(Gradients, DecoupledParameterGetsZero) {
  // with zero advisors the attention path is constant, so wq gets no gradient
  Model<double> model(tiny_hyper());
  std::mt19937_64 rng(9);
  const MatrixXd x = gaussian<double>(6, 8, rng);
  ForwardCache<double> cache;
  const MatrixXd out = model.forward(model.params(), x, Mode::train, &cache);
  VectorXd g = VectorXd::Zero(model.params().size());
  model.backward(model.params(), cache, MatrixXd(out - x), g);
  const auto& wq = model.layout().at("block0.wq");
  EXPECT_EQ(g.segment(wq.offset, wq.size()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Model<float> model(tiny_hyper());
  std::mt19937_64 rng(10);
  fill_advisors(model, rng);
  model.advisors()[1].update_count = 17;
  const fs::path path = temp_file("roundtrip.ckpt");
  save_checkpoint(model, path);
  const Model<float> loaded = load_checkpoint(path);
  EXPECT_TRUE((loaded.params().array() == model.params().array()).all());
  ASSERT_EQ(loaded.advisors().size(), model.advisors().size());
  for (std::size_t i = 0; i < model.advisors().size(); ++i) {
    EXPECT_TRUE((loaded.advisors()[i].s.array() == model.advisors()[i].s.array()).all());
    EXPECT_EQ(loaded.advisors()[i].update_count, model.advisors()[i].update_count);
  }
  EXPECT_EQ(loaded.feature_map_seeds(), model.feature_map_seeds());
  const MatrixXf x = gaussian<float>(6, 8, rng);
  EXPECT_TRUE((loaded.forward(x, Mode::eval).array() == model.forward(x, Mode::eval).array()).all());
  fs::remove(path);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const Model<float> model(tiny_hyper());
  const fs::path path = temp_file("corrupt.ckpt");
  save_checkpoint(model, path);
  const std::string good = read_bytes(path);

  write_bytes(path, good.substr(0, good.size() / 2));
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  std::string bad = good;
  bad[0] = 'X';
  write_bytes(path, bad);
  try {
    load_checkpoint(path);
    FAIL() << "bad magic accepted";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  bad = good;
  bad[4] = 2;
  write_bytes(path, bad);
  try {
    load_checkpoint(path);
    FAIL() << "future version accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    EXPECT_EQ(e.offset(), 4u);
  }

  write_bytes(path, "");
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

}  // namespace
}  // namespace ckad
