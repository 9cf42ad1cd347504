#pragma once

#include "ckad/advisor.hpp"
#include "ckad/attention.hpp"
#include "ckad/layers.hpp"
#include "ckad/params.hpp"
#include "ckad/pointcloud.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ckad {

struct ModelHyper {
  Eigen::Index d = 64;             // token width
  Eigen::Index m = 10;             // random features per attention layer
  Eigen::Index blocks = 4;         // encoder + decoder blocks
  Eigen::Index embed_hidden = 128; // first per-point stage width
  Eigen::Index ffn_ratio = 4;
  Eigen::Index num_groups = 256;
  Eigen::Index group_size = 32;
  double eta = 10.0;
  RadiusMode radius_mode = RadiusMode::per_center;
  double alpha = 0.7;
  double beta = 0.7;
  double epsilon = 0.1;     // recorded with the model, consumed by the rpp loss
  double lambda_rpp = 1.0;  // recorded with the model, consumed by the rpp loss
  double phi_scale = 0.5;   // norm of projected queries/keys entering phi
  bool use_kal = true;         // token-mixing kernel attention in the embedder
  bool use_kaa = true;         // advisor attention in the blocks; false = plain linear attention
  bool kaa_normalized = false; // divide advisor output by sum(phi(q))
  std::uint64_t seed = 0;

  void validate() const;
  GroupingConfig grouping(std::uint64_t fps_seed = 0) const;
  Eigen::Index encoder_blocks() const { return (blocks + 1) / 2; }
};

enum class Mode { train, eval };

template <typename Scalar>
struct EmbedCache {
  Matrix<Scalar> points;   // (n*g) x 3
  Matrix<Scalar> centers;  // n x 3
  Matrix<Scalar> a1, a2;   // per-point pre-activations
  Matrix<Scalar> h1, h2;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax;  // n x d, row into h2
  Matrix<Scalar> pa1, ph1;
  Matrix<Scalar> x0;  // pooled + positional
  // token mixing
  layers::LayerNormCache<Scalar> ln;
  Matrix<Scalar> h, q, k;
  Vector<Scalar> q_inv, k_inv;
  Matrix<Scalar> qn, kn;
  LinearAttentionCache<Scalar> attn;
  Matrix<Scalar> attn_out;
};

template <typename Scalar>
struct BlockCache {
  Matrix<Scalar> x_in;
  layers::LayerNormCache<Scalar> ln1;
  Matrix<Scalar> h1;
  Matrix<Scalar> q, qn, phi_q;
  Vector<Scalar> q_inv;
  Matrix<Scalar> k, kn, phi_k, v;  // filled in train mode (advisor) or always (linear attention)
  Vector<Scalar> k_inv;
  LinearAttentionCache<Scalar> linear;
  Matrix<Scalar> attn_num;  // advisor output before normalization
  Vector<Scalar> attn_den;
  Matrix<Scalar> attn;      // before the output projection
  Matrix<Scalar> x_mid;
  layers::LayerNormCache<Scalar> ln2;
  Matrix<Scalar> h2, f_pre, f_act;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<BlockCache<Scalar>> blocks;
};

namespace detail {

struct EmbedSlots {
  ParamLayout::Entry w1, b1, w2, b2, pw1, pb1, pw2, pb2;
  std::optional<ParamLayout::Entry> ln_g, ln_b, wq, wk, wv, wo;
};

struct BlockSlots {
  ParamLayout::Entry ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
};

}  // namespace detail

/// Token embedder plus a stack of pre-norm residual blocks whose attention
/// reads from a per-layer advisor state. Trainable weights live in one flat
/// vector; feature maps and advisor states are held separately.
template <typename Scalar>
class Model {
 public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;
  using Entry = ParamLayout::Entry;

  Model() = default;
  explicit Model(const ModelHyper& hyper);

  const ModelHyper& hyper() const { return hyper_; }
  const ParamLayout& layout() const { return layout_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  /// Flat-vector offset where the encoder-decoder weights begin; everything
  /// before it belongs to the embedder.
  Eigen::Index trunk_offset() const { return trunk_offset_; }

  const RandomFeatureMap<Scalar>& embed_map() const { return maps_.front(); }
  const RandomFeatureMap<Scalar>& block_map(Eigen::Index b) const { return maps_[static_cast<std::size_t>(b + 1)]; }
  std::vector<std::uint64_t> feature_map_seeds() const;
  /// Rebuilds every feature map from stored seeds (checkpoint load).
  void set_feature_map_seeds(const std::vector<std::uint64_t>& seeds);
  std::vector<AdvisorState>& advisors() { return advisors_; }
  const std::vector<AdvisorState>& advisors() const { return advisors_; }

  /// Groups -> n x d tokens.
  Mat embed(const Vec& theta, const GroupedCloud& grouped, EmbedCache<Scalar>* cache = nullptr) const;
  Mat embed(const GroupedCloud& grouped) const { return embed(params_, grouped); }
  void embed_backward(const Vec& theta, const EmbedCache<Scalar>& cache, const Mat& d_tokens, Vec& grad) const;

  /// Encoder-decoder reconstruction of the tokens.
  Mat forward(const Vec& theta, const Mat& tokens, Mode mode, ForwardCache<Scalar>* cache = nullptr) const;
  Mat forward(const Mat& tokens, Mode mode = Mode::eval) const { return forward(params_, tokens, mode); }
  /// Accumulates parameter gradients into `grad`; returns d loss / d tokens.
  Mat backward(const Vec& theta, const ForwardCache<Scalar>& cache, const Mat& d_out, Vec& grad) const;

  /// Applies one advisor update per layer using the key features and values
  /// gathered in train-mode forward passes (all caches form one batch).
  void update_advisors(const std::vector<const ForwardCache<Scalar>*>& caches);

  template <typename Other>
  Model<Other> cast() const;

 private:
  template <typename>
  friend class Model;

  using EmbedSlots = detail::EmbedSlots;
  using BlockSlots = detail::BlockSlots;

  void build_layout();
  void init_params();
  Mat block_forward(const Vec& theta, Eigen::Index b, const Mat& x, Mode mode, BlockCache<Scalar>* c) const;
  Mat block_backward(const Vec& theta, Eigen::Index b, const BlockCache<Scalar>& c, const Mat& d_out,
                     Vec& grad) const;

  ModelHyper hyper_;
  ParamLayout layout_;
  Vec params_;
  Eigen::Index trunk_offset_ = 0;
  EmbedSlots embed_slots_;
  std::vector<BlockSlots> block_slots_;
  std::vector<RandomFeatureMap<Scalar>> maps_;  // [0] embedder, [1 + b] block b
  std::vector<AdvisorState> advisors_;
};

/// Mean squared error over all n*d entries.
template <typename Scalar>
Scalar recon_loss(const Matrix<Scalar>& input, const Matrix<Scalar>& output) {
  if (input.rows() != output.rows() || input.cols() != output.cols())
    throw ArgumentError("recon_loss: shape mismatch");
  return (input - output).squaredNorm() / static_cast<Scalar>(input.size());
}

/// Squared L2 distance per token.
template <typename Scalar>
Vector<Scalar> token_scores(const Matrix<Scalar>& input, const Matrix<Scalar>& output) {
  return (input - output).rowwise().squaredNorm();
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace ckad
