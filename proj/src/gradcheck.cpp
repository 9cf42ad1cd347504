#include "ckad/gradcheck.hpp"

#include "ckad/rpp.hpp"
#include "ckad/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ckad {

ModelHyper gradcheck_hyper(const GradcheckConfig& cfg) {
  ModelHyper h;
  h.d = 8;
  h.m = 8;
  h.blocks = cfg.blocks;
  h.embed_hidden = 8;
  h.ffn_ratio = 2;
  h.num_groups = 4;
  h.group_size = 4;
  h.use_kaa = cfg.use_kaa;
  h.use_kal = true;
  h.kaa_normalized = cfg.kaa_normalized;
  h.seed = cfg.seed;
  return h;
}

namespace {

struct Problem {
  Model<double> model;
  GroupedCloud grouped;
  MatrixXd noise;
  VectorXd delta;
  ParamRange range;
  PerturbationConfig pc;
};

Problem make_problem(const GradcheckConfig& cfg) {
  Problem p{Model<double>(gradcheck_hyper(cfg)), {}, {}, {}, {}, {}};
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd;

  // Non-trivial advisor states so the attention path carries signal.
  for (auto& a : p.model.advisors())
    for (Eigen::Index i = 0; i < a.s.size(); ++i) a.s.data()[i] = 0.3 * nd(rng);
  // Perturb gains and biases away from their initial values.
  for (Eigen::Index i = 0; i < p.model.params().size(); ++i) p.model.params()(i) += 0.05 * nd(rng);

  PointCloud cloud;
  cloud.points = generate_normal(CategorySpec{"sphere", Shape::sphere, 64, 0.01, false}, mix_seed(cfg.seed, 1)).points;
  p.grouped = make_groups(cloud, p.model.hyper().grouping(3));
  p.noise = MatrixXd::NullaryExpr(p.model.hyper().num_groups, p.model.hyper().d, [&] { return 0.1 * nd(rng); });

  const Eigen::Index total = p.model.params().size();
  p.range = {cfg.include_embedder ? Eigen::Index{0} : p.model.trunk_offset(), total};
  p.pc.epsilon = cfg.include_rpp ? 0.05 : 0.0;
  p.pc.lambda_rpp = cfg.include_rpp ? 0.5 : 0.0;
  p.delta = sample_perturbation<double>(total, p.range, p.pc.epsilon, mix_seed(cfg.seed, 2));
  return p;
}

// Full training objective (embedder, reconstruction, fixed-perturbation term).
template <typename Scalar>
double objective(const Model<Scalar>& model, const Problem& p, const GradcheckConfig& cfg, const Vector<Scalar>& theta,
                 Vector<Scalar>* grad) {
  using Mat = Matrix<Scalar>;
  EmbedCache<Scalar> ec;
  const Mat tokens = cfg.include_embedder ? model.embed(theta, p.grouped, &ec) : model.embed(theta, p.grouped);
  const std::vector<Mat> inputs{tokens + p.noise.cast<Scalar>()};
  const std::vector<Mat> targets{tokens};
  ObjectiveOptions opt;
  opt.gradient = grad != nullptr;
  opt.use_fixed_delta = true;
  const Vector<Scalar> delta = p.delta.cast<Scalar>();
  auto res = composite_objective(model, theta, inputs, targets, p.pc, p.range, opt, grad, &delta);
  if (grad && cfg.include_embedder) model.embed_backward(theta, ec, Mat(res.d_inputs[0] + res.d_targets[0]), *grad);
  return static_cast<double>(res.total);
}

}  // namespace

// The analytic gradient runs in Scalar; central differences always run in
// float64 on the same weights, so a float32 check measures the float32
// backward pass against an accurate reference.
template <typename Scalar>
GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  Problem p = make_problem(cfg);
  const Model<Scalar> model = p.model.template cast<Scalar>();
  const Eigen::Index total = p.model.params().size();

  Vector<Scalar> analytic = Vector<Scalar>::Zero(total);
  objective(model, p, cfg, model.params(), &analytic);
  if (cfg.corrupt) analytic(p.range.begin) += static_cast<Scalar>(1e-2);

  const VectorXd theta = p.model.params();
  GradcheckReport report;
  report.rel_tol = cfg.rel_tol;
  for (const auto& e : p.model.layout().entries()) {
    const Eigen::Index begin = e.offset, end = e.offset + e.rows * e.cols;
    if (end <= p.range.begin) continue;
    GradcheckTensor t;
    t.name = e.name;
    for (Eigen::Index i = std::max(begin, p.range.begin); i < end; ++i) {
      VectorXd tp = theta, tm = theta;
      tp(i) += cfg.step;
      tm(i) -= cfg.step;
      const double numeric =
          (objective(p.model, p, cfg, tp, static_cast<VectorXd*>(nullptr)) - objective(p.model, p, cfg, tm, static_cast<VectorXd*>(nullptr))) / (tp(i) - tm(i));
      const double a = static_cast<double>(analytic(i));
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), cfg.floor});
      ++report.checked;
      if (rel >= t.rel_error) {
        t.rel_error = rel;
        t.worst_index = i - begin;
        t.analytic = a;
        t.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, t.rel_error);
    report.tensors.push_back(t);
  }
  report.passed = report.max_rel_error <= cfg.rel_tol;
  return report;
}

template GradcheckReport run_gradcheck<float>(const GradcheckConfig&);
template GradcheckReport run_gradcheck<double>(const GradcheckConfig&);

}  // namespace ckad
