#include "ckad/model.hpp"

#include "ckad/synthgen.hpp"

#include <random>

namespace ckad {

void ModelHyper::validate() const {
  if (d < 1 || m < 1 || blocks < 1 || embed_hidden < 1 || ffn_ratio < 1)
    throw ArgumentError("model widths and block count must be positive");
  if (num_groups < 2) throw ArgumentError("need at least two groups");
  if (group_size < 1) throw ArgumentError("group size must be positive");
  if (!(eta >= 0.0)) throw ArgumentError("eta must be non-negative");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("beta must lie in [0, 1]");
  if (!(phi_scale > 0.0)) throw ArgumentError("phi_scale must be positive");
}

GroupingConfig ModelHyper::grouping(std::uint64_t fps_seed) const {
  GroupingConfig g;
  g.num_groups = num_groups;
  g.group_size = group_size;
  g.eta = eta;
  g.radius_mode = radius_mode;
  g.fps_seed = fps_seed;
  return g;
}

template <typename Scalar>
Model<Scalar>::Model(const ModelHyper& hyper) : hyper_(hyper) {
  hyper_.validate();
  build_layout();
  init_params();
  maps_.emplace_back(hyper_.d, hyper_.m, mix_seed(hyper_.seed, 100));
  for (Eigen::Index b = 0; b < hyper_.blocks; ++b) {
    maps_.emplace_back(hyper_.d, hyper_.m, mix_seed(hyper_.seed, 101 + static_cast<std::uint64_t>(b)));
    advisors_.emplace_back(hyper_.d, hyper_.m, hyper_.alpha, hyper_.beta);
  }
}

template <typename Scalar>
void Model<Scalar>::build_layout() {
  const Eigen::Index d = hyper_.d, h = hyper_.embed_hidden, f = hyper_.d * hyper_.ffn_ratio;
  auto& e = embed_slots_;
  e.w1 = layout_.add("embed.w1", 3, h);
  e.b1 = layout_.add("embed.b1", 1, h);
  e.w2 = layout_.add("embed.w2", h, d);
  e.b2 = layout_.add("embed.b2", 1, d);
  e.pw1 = layout_.add("pos.w1", 3, h);
  e.pb1 = layout_.add("pos.b1", 1, h);
  e.pw2 = layout_.add("pos.w2", h, d);
  e.pb2 = layout_.add("pos.b2", 1, d);
  if (hyper_.use_kal) {
    e.ln_g = layout_.add("kal.ln.g", 1, d);
    e.ln_b = layout_.add("kal.ln.b", 1, d);
    e.wq = layout_.add("kal.wq", d, d);
    e.wk = layout_.add("kal.wk", d, d);
    e.wv = layout_.add("kal.wv", d, d);
    e.wo = layout_.add("kal.wo", d, d);
  }
  trunk_offset_ = layout_.size();
  for (Eigen::Index b = 0; b < hyper_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    BlockSlots s;
    s.ln1_g = layout_.add(p + "ln1.g", 1, d);
    s.ln1_b = layout_.add(p + "ln1.b", 1, d);
    s.wq = layout_.add(p + "wq", d, d);
    s.wk = layout_.add(p + "wk", d, d);
    s.wv = layout_.add(p + "wv", d, d);
    s.wo = layout_.add(p + "wo", d, d);
    s.ln2_g = layout_.add(p + "ln2.g", 1, d);
    s.ln2_b = layout_.add(p + "ln2.b", 1, d);
    s.ff_w1 = layout_.add(p + "ff.w1", d, f);
    s.ff_b1 = layout_.add(p + "ff.b1", 1, f);
    s.ff_w2 = layout_.add(p + "ff.w2", f, d);
    s.ff_b2 = layout_.add(p + "ff.b2", 1, d);
    block_slots_.push_back(s);
  }
}

template <typename Scalar>
void Model<Scalar>::init_params() {
  params_ = Vec::Zero(layout_.size());
  std::mt19937_64 rng(mix_seed(hyper_.seed, 1));
  std::normal_distribution<double> nd;
  for (const auto& e : layout_.entries()) {
    auto w = view(params_, e);
    const std::string& n = e.name;
    const bool is_gain = n.ends_with(".g");
    const bool is_bias = n.ends_with(".b") || n.ends_with("b1") || n.ends_with("b2");
    if (is_gain) {
      w.setOnes();
    } else if (!is_bias) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(e.rows));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(scale * nd(rng));
    }
  }
}

template <typename Scalar>
auto Model<Scalar>::embed(const Vec& theta, const GroupedCloud& grouped, EmbedCache<Scalar>* cache) const -> Mat {
  const Eigen::Index n = grouped.num_groups(), g = grouped.group_size, d = hyper_.d;
  if (n < 1 || g < 1) throw ArgumentError("embed: empty grouping");
  const auto& s = embed_slots_;
  EmbedCache<Scalar> local;
  EmbedCache<Scalar>& c = cache ? *cache : local;

  // group offsets in units of their mean length over the whole cloud
  c.points = grouped.members.template cast<Scalar>();
  const Scalar spread = c.points.rowwise().norm().mean();
  if (spread > Scalar(0)) c.points /= spread;
  // centers in units of their rms norm
  c.centers = grouped.centers.template cast<Scalar>();
  const Scalar rms = std::sqrt(c.centers.squaredNorm() / static_cast<Scalar>(n));
  if (rms > Scalar(0)) c.centers /= rms;
  c.a1 = c.points * view(theta, s.w1);
  c.a1.rowwise() += view(theta, s.b1).row(0);
  c.h1 = layers::gelu(c.a1.array()).matrix();
  c.a2 = c.h1 * view(theta, s.w2);
  c.a2.rowwise() += view(theta, s.b2).row(0);
  c.h2 = layers::gelu(c.a2.array()).matrix();

  Mat pooled(n, d);
  c.argmax.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      Eigen::Index best = 0;
      pooled(i, j) = c.h2.col(j).segment(i * g, g).maxCoeff(&best);
      c.argmax(i, j) = i * g + best;
    }
  }

  c.pa1 = c.centers * view(theta, s.pw1);
  c.pa1.rowwise() += view(theta, s.pb1).row(0);
  c.ph1 = layers::gelu(c.pa1.array()).matrix();
  c.x0 = pooled + c.ph1 * view(theta, s.pw2);
  c.x0.rowwise() += view(theta, s.pb2).row(0);

  if (!hyper_.use_kal) return c.x0;

  const auto scale = static_cast<Scalar>(hyper_.phi_scale);
  c.h = layers::layer_norm(c.x0, view(theta, *s.ln_g), view(theta, *s.ln_b), &c.ln);
  c.q = c.h * view(theta, *s.wq);
  c.k = c.h * view(theta, *s.wk);
  const Mat v = c.h * view(theta, *s.wv);
  c.qn = layers::scale_rows(c.q, scale, &c.q_inv);
  c.kn = layers::scale_rows(c.k, scale, &c.k_inv);
  c.attn_out = linear_attention_features<Scalar>(phi_rows(c.qn, embed_map()), phi_rows(c.kn, embed_map()), v,
                                                 static_cast<Scalar>(kAttentionStabilizer), &c.attn);
  Mat out = c.x0 + c.attn_out * view(theta, *s.wo);
  if (!out.allFinite()) throw NumericError("non-finite activation in embedder token mixing");
  return out;
}

template <typename Scalar>
void Model<Scalar>::embed_backward(const Vec& theta, const EmbedCache<Scalar>& c, const Mat& d_tokens,
                                   Vec& grad) const {
  const auto& s = embed_slots_;
  const Eigen::Index n = c.x0.rows(), d = hyper_.d;
  Mat d_x0 = d_tokens;
  if (hyper_.use_kal) {
    const auto scale = static_cast<Scalar>(hyper_.phi_scale);
    view(grad, *s.wo) += c.attn_out.transpose() * d_tokens;
    const Mat d_attn = d_tokens * view(theta, *s.wo).transpose();
    const auto la = linear_attention_backward(c.attn, d_attn);
    const Mat d_qn = phi_rows_backward(c.qn, c.attn.phi_q, la.d_phi_q, embed_map());
    const Mat d_kn = phi_rows_backward(c.kn, c.attn.phi_k, la.d_phi_k, embed_map());
    const Mat d_q = layers::scale_rows_backward(c.q, c.q_inv, scale, d_qn);
    const Mat d_k = layers::scale_rows_backward(c.k, c.k_inv, scale, d_kn);
    view(grad, *s.wq) += c.h.transpose() * d_q;
    view(grad, *s.wk) += c.h.transpose() * d_k;
    view(grad, *s.wv) += c.h.transpose() * la.d_v;
    const Mat d_h = d_q * view(theta, *s.wq).transpose() + d_k * view(theta, *s.wk).transpose() +
                    la.d_v * view(theta, *s.wv).transpose();
    d_x0 += layers::layer_norm_backward(c.ln, view(theta, *s.ln_g), d_h, view(grad, *s.ln_g), view(grad, *s.ln_b));
  }

  // positional branch
  view(grad, s.pw2) += c.ph1.transpose() * d_x0;
  view(grad, s.pb2).row(0) += d_x0.colwise().sum();
  const Mat d_pa1 = ((d_x0 * view(theta, s.pw2).transpose()).array() * layers::gelu_grad(c.pa1.array())).matrix();
  view(grad, s.pw1) += c.centers.transpose() * d_pa1;
  view(grad, s.pb1).row(0) += d_pa1.colwise().sum();

  // max-pool routes each pooled gradient to its argmax point
  Mat d_h2 = Mat::Zero(c.h2.rows(), d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) d_h2(c.argmax(i, j), j) += d_x0(i, j);
  const Mat d_a2 = (d_h2.array() * layers::gelu_grad(c.a2.array())).matrix();
  view(grad, s.w2) += c.h1.transpose() * d_a2;
  view(grad, s.b2).row(0) += d_a2.colwise().sum();
  const Mat d_a1 = ((d_a2 * view(theta, s.w2).transpose()).array() * layers::gelu_grad(c.a1.array())).matrix();
  view(grad, s.w1) += c.points.transpose() * d_a1;
  view(grad, s.b1).row(0) += d_a1.colwise().sum();
}

template <typename Scalar>
auto Model<Scalar>::block_forward(const Vec& theta, Eigen::Index b, const Mat& x, Mode mode,
                                  BlockCache<Scalar>* cache) const -> Mat {
  const auto& s = block_slots_[static_cast<std::size_t>(b)];
  const auto& map = block_map(b);
  const auto scale = static_cast<Scalar>(hyper_.phi_scale);
  BlockCache<Scalar> local;
  BlockCache<Scalar>& c = cache ? *cache : local;

  c.x_in = x;
  c.h1 = layers::layer_norm(x, view(theta, s.ln1_g), view(theta, s.ln1_b), &c.ln1);
  c.q = c.h1 * view(theta, s.wq);
  c.qn = layers::scale_rows(c.q, scale, &c.q_inv);
  c.phi_q = phi_rows(c.qn, map);

  const bool need_kv = !hyper_.use_kaa || mode == Mode::train;
  if (need_kv) {
    c.k = c.h1 * view(theta, s.wk);
    c.kn = layers::scale_rows(c.k, scale, &c.k_inv);
    c.phi_k = phi_rows(c.kn, map);
    c.v = c.h1 * view(theta, s.wv);
  }

  if (hyper_.use_kaa) {
    const AdvisorState& adv = advisors_[static_cast<std::size_t>(b)];
    c.attn_num = kaa_output<Scalar>(adv, c.phi_q, false);
    if (hyper_.kaa_normalized) {
      c.attn_den = c.phi_q.rowwise().sum().array() + static_cast<Scalar>(kAttentionStabilizer);
      c.attn = c.attn_num.array().colwise() / c.attn_den.array();
    } else {
      c.attn = c.attn_num;
    }
  } else {
    c.attn = linear_attention_features<Scalar>(c.phi_q, c.phi_k, c.v, static_cast<Scalar>(kAttentionStabilizer),
                                               &c.linear);
  }

  c.x_mid = x + c.attn * view(theta, s.wo);
  c.h2 = layers::layer_norm(c.x_mid, view(theta, s.ln2_g), view(theta, s.ln2_b), &c.ln2);
  c.f_pre = c.h2 * view(theta, s.ff_w1);
  c.f_pre.rowwise() += view(theta, s.ff_b1).row(0);
  c.f_act = layers::gelu(c.f_pre.array()).matrix();
  Mat out = c.x_mid + c.f_act * view(theta, s.ff_w2);
  out.rowwise() += view(theta, s.ff_b2).row(0);
  if (!out.allFinite()) throw NumericError("non-finite activation in block " + std::to_string(b));
  return out;
}

template <typename Scalar>
auto Model<Scalar>::block_backward(const Vec& theta, Eigen::Index b, const BlockCache<Scalar>& c, const Mat& d_out,
                                   Vec& grad) const -> Mat {
  const auto& s = block_slots_[static_cast<std::size_t>(b)];
  const auto& map = block_map(b);
  const auto scale = static_cast<Scalar>(hyper_.phi_scale);

  // feed-forward
  view(grad, s.ff_w2) += c.f_act.transpose() * d_out;
  view(grad, s.ff_b2).row(0) += d_out.colwise().sum();
  const Mat d_pre =
      ((d_out * view(theta, s.ff_w2).transpose()).array() * layers::gelu_grad(c.f_pre.array())).matrix();
  view(grad, s.ff_w1) += c.h2.transpose() * d_pre;
  view(grad, s.ff_b1).row(0) += d_pre.colwise().sum();
  const Mat d_h2 = d_pre * view(theta, s.ff_w1).transpose();
  Mat d_mid = d_out + layers::layer_norm_backward(c.ln2, view(theta, s.ln2_g), d_h2, view(grad, s.ln2_g),
                                                   view(grad, s.ln2_b));

  // attention
  view(grad, s.wo) += c.attn.transpose() * d_mid;
  const Mat d_attn = d_mid * view(theta, s.wo).transpose();
  Mat d_phi_q;
  Mat d_h1 = Mat::Zero(c.h1.rows(), c.h1.cols());
  if (hyper_.use_kaa) {
    // S receives no gradient; only the query path is differentiated.
    const Mat s_mat = advisors_[static_cast<std::size_t>(b)].s.template cast<Scalar>();
    if (hyper_.kaa_normalized) {
      const Mat d_num = d_attn.array().colwise() / c.attn_den.array();
      const Vec d_den =
          -(d_attn.cwiseProduct(c.attn_num).rowwise().sum().array() / c.attn_den.array().square()).matrix();
      d_phi_q = d_num * s_mat;
      d_phi_q.colwise() += d_den;
    } else {
      d_phi_q = d_attn * s_mat;
    }
  } else {
    const auto la = linear_attention_backward(c.linear, d_attn);
    d_phi_q = la.d_phi_q;
    const Mat d_kn = phi_rows_backward(c.kn, c.phi_k, la.d_phi_k, map);
    const Mat d_k = layers::scale_rows_backward(c.k, c.k_inv, scale, d_kn);
    view(grad, s.wk) += c.h1.transpose() * d_k;
    view(grad, s.wv) += c.h1.transpose() * la.d_v;
    d_h1 += d_k * view(theta, s.wk).transpose() + la.d_v * view(theta, s.wv).transpose();
  }
  const Mat d_qn = phi_rows_backward(c.qn, c.phi_q, d_phi_q, map);
  const Mat d_q = layers::scale_rows_backward(c.q, c.q_inv, scale, d_qn);
  view(grad, s.wq) += c.h1.transpose() * d_q;
  d_h1 += d_q * view(theta, s.wq).transpose();
  return d_mid +
         layers::layer_norm_backward(c.ln1, view(theta, s.ln1_g), d_h1, view(grad, s.ln1_g), view(grad, s.ln1_b));
}

template <typename Scalar>
auto Model<Scalar>::forward(const Vec& theta, const Mat& tokens, Mode mode, ForwardCache<Scalar>* cache) const
    -> Mat {
  if (tokens.cols() != hyper_.d) throw ArgumentError("forward: token width does not match the model");
  if (theta.size() != layout_.size()) throw ArgumentError("forward: parameter vector has the wrong size");
  if (cache) cache->blocks.resize(static_cast<std::size_t>(hyper_.blocks));
  Mat x = tokens;
  for (Eigen::Index b = 0; b < hyper_.blocks; ++b)
    x = block_forward(theta, b, x, mode, cache ? &cache->blocks[static_cast<std::size_t>(b)] : nullptr);
  return x;
}

template <typename Scalar>
auto Model<Scalar>::backward(const Vec& theta, const ForwardCache<Scalar>& cache, const Mat& d_out, Vec& grad) const
    -> Mat {
  if (grad.size() != layout_.size()) throw ArgumentError("backward: gradient vector has the wrong size");
  Mat d = d_out;
  for (Eigen::Index b = hyper_.blocks - 1; b >= 0; --b)
    d = block_backward(theta, b, cache.blocks[static_cast<std::size_t>(b)], d, grad);
  if (!grad.allFinite()) throw NumericError("non-finite parameter gradient");
  return d;
}

template <typename Scalar>
void Model<Scalar>::update_advisors(const std::vector<const ForwardCache<Scalar>*>& caches) {
  if (!hyper_.use_kaa || caches.empty()) return;
  std::vector<AdvisorState> next = advisors_;
  for (Eigen::Index b = 0; b < hyper_.blocks; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    Eigen::Index rows = 0;
    for (const auto* c : caches) {
      if (c->blocks.size() != advisors_.size() || c->blocks[bi].phi_k.rows() == 0)
        throw ArgumentError("update_advisors needs train-mode forward caches");
      rows += c->blocks[bi].phi_k.rows();
    }
    MatrixXd phi_k(rows, hyper_.m), v(rows, hyper_.d);
    Eigen::Index at = 0;
    for (const auto* c : caches) {
      const auto& bc = c->blocks[bi];
      phi_k.middleRows(at, bc.phi_k.rows()) = bc.phi_k.template cast<double>();
      v.middleRows(at, bc.v.rows()) = bc.v.template cast<double>();
      at += bc.phi_k.rows();
    }
    apply_kaa_update(next[bi], phi_k, v);
  }
  advisors_ = std::move(next);
}

template <typename Scalar>
std::vector<std::uint64_t> Model<Scalar>::feature_map_seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& m : maps_) out.push_back(m.seed());
  return out;
}

template <typename Scalar>
void Model<Scalar>::set_feature_map_seeds(const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != maps_.size()) throw ArgumentError("feature map seed count does not match the model");
  for (std::size_t i = 0; i < seeds.size(); ++i) maps_[i] = RandomFeatureMap<Scalar>(hyper_.d, hyper_.m, seeds[i]);
}

template <typename Scalar>
template <typename Other>
Model<Other> Model<Scalar>::cast() const {
  Model<Other> out;
  out.hyper_ = hyper_;
  out.layout_ = layout_;
  out.params_ = params_.template cast<Other>();
  out.trunk_offset_ = trunk_offset_;
  out.embed_slots_ = embed_slots_;
  out.block_slots_ = block_slots_;
  for (const auto& m : maps_) out.maps_.push_back(m.template cast<Other>());
  out.advisors_ = advisors_;
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace ckad
