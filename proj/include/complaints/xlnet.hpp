#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "complaints/encoder.hpp"

namespace complaints {

struct XlnetConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t intermediate = 128;
  nn::Activation activation = nn::Activation::gelu;
  Real layer_norm_eps = 1e-12;
  Real dropout = 0.1;
  Real summary_dropout = 0.1;
  Real initializer_range = 0.02;
};

/// Relative-attention encoder in the XLNet layout: content stream only,
/// bidirectional attention, segment-difference embeddings, pooled from the
/// last token through a dense + tanh summary.
///
/// Projection tensors q, k, v, o, r are stored as d_model x (heads * d_head),
/// the per-head biases as heads x d_head and seg_embed as 2 x (heads * d_head).
class XlnetEncoder final : public Encoder {
 public:
  struct Layer {
    Matrix q, k, v, o, r;
    Matrix r_w_bias, r_r_bias, r_s_bias;
    Matrix seg_embed;
    nn::LayerNorm attention_norm;
    nn::Linear ff1, ff2;
    nn::LayerNorm ff_norm;

    Layer() = default;
    Layer(std::size_t d, std::size_t heads, std::size_t ff, Real eps) {
      const auto di = static_cast<Eigen::Index>(d);
      const auto n = static_cast<Eigen::Index>(heads);
      for (Matrix* m : {&q, &k, &v, &o, &r}) *m = Matrix::Zero(di, di);
      for (Matrix* m : {&r_w_bias, &r_r_bias, &r_s_bias}) *m = Matrix::Zero(n, di / n);
      seg_embed = Matrix::Zero(2, di);
      attention_norm = nn::LayerNorm(d, eps);
      ff1 = nn::Linear(d, ff);
      ff2 = nn::Linear(ff, d);
      ff_norm = nn::LayerNorm(d, eps);
    }

    void visit(const std::string& p, const Visitor& f) {
      f(tensor_ref(p + ".rel_attn.q", q));
      f(tensor_ref(p + ".rel_attn.k", k));
      f(tensor_ref(p + ".rel_attn.v", v));
      f(tensor_ref(p + ".rel_attn.o", o));
      f(tensor_ref(p + ".rel_attn.r", r));
      f(tensor_ref(p + ".rel_attn.r_r_bias", r_r_bias));
      f(tensor_ref(p + ".rel_attn.r_s_bias", r_s_bias));
      f(tensor_ref(p + ".rel_attn.r_w_bias", r_w_bias));
      f(tensor_ref(p + ".rel_attn.seg_embed", seg_embed));
      attention_norm.visit(p + ".rel_attn.layer_norm", f);
      ff_norm.visit(p + ".ff.layer_norm", f);
      ff1.visit(p + ".ff.layer_1", f);
      ff2.visit(p + ".ff.layer_2", f);
    }
  };

  explicit XlnetEncoder(XlnetConfig config) : config_(std::move(config)) {
    if (config_.vocab_size == 0) throw ConfigError("encoder vocab_size must be positive");
    if (config_.hidden % config_.heads != 0 || config_.hidden % 2 != 0)
      throw ConfigError("encoder hidden size must be even and divisible by the head count");
    word_embedding_ = Matrix::Zero(static_cast<Eigen::Index>(config_.vocab_size),
                                   static_cast<Eigen::Index>(config_.hidden));
    for (std::size_t i = 0; i < config_.layers; ++i)
      layers_.emplace_back(config_.hidden, config_.heads, config_.intermediate,
                           config_.layer_norm_eps);
    summary_ = nn::Linear(config_.hidden, config_.hidden);
  }

  const XlnetConfig& config() const { return config_; }
  std::size_t d_model() const override { return config_.hidden; }

  void initialize(std::mt19937_64& rng) {
    std::normal_distribution<Real> n(0.0, config_.initializer_range);
    visit([&](TensorRef t) {
      const bool is_norm = t.name.find("layer_norm") != std::string::npos;
      const bool is_bias = t.name.size() >= 4 && t.name.compare(t.name.size() - 4, 4, "bias") == 0 &&
                           t.name.find("_bias") == std::string::npos;
      for (Real& x : t.data) x = is_norm ? (is_bias ? 0.0 : 1.0) : is_bias ? 0.0 : n(rng);
    });
  }

  void visit(const Visitor& f) override {
    f(tensor_ref("word_embedding.weight", word_embedding_));
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].visit("layer." + std::to_string(i), f);
    summary_.visit("sequence_summary.summary", f);
  }

  std::unique_ptr<Encoder> zeros_like() const override {
    auto z = std::make_unique<XlnetEncoder>(config_);
    zero_out(*z);
    return z;
  }
  std::unique_ptr<Encoder> clone() const override { return std::make_unique<XlnetEncoder>(*this); }

  /// Sinusoidal encodings of relative distances L, L-1, ..., -L+1 (2L x d).
  Matrix relative_positions(Eigen::Index L) const {
    const auto d = static_cast<Eigen::Index>(config_.hidden);
    Matrix pos(2 * L, d);
    for (Eigen::Index p = 0; p < 2 * L; ++p) {
      const Real distance = static_cast<Real>(L - p);
      for (Eigen::Index f = 0; f < d / 2; ++f) {
        const Real inv_freq = 1.0 / std::pow(10000.0, static_cast<Real>(2 * f) / static_cast<Real>(d));
        pos(p, f) = std::sin(distance * inv_freq);
        pos(p, f + d / 2) = std::cos(distance * inv_freq);
      }
    }
    return pos;
  }

  struct LayerCache {
    Matrix input, q, k, v, r;
    std::vector<Matrix> probs, prob_masks;
    Matrix attn_vec, attention_mask;
    nn::LayerNorm::Cache norm1;
    Matrix hidden1, pre_activation, activated, ff_mask1, ff_mask2;
    nn::LayerNorm::Cache norm2;
  };

  struct Cache final : EncoderCache {
    TokenSequence seq;
    Matrix embedding_mask;
    Matrix positions;  // after dropout
    std::vector<LayerCache> layers;
    Vector output_mask;  // combined output dropouts on the last row
    Vector last_token;   // after output dropouts
    Vector pooled;
  };

  std::unique_ptr<EncoderCache> make_cache() const override { return std::make_unique<Cache>(); }

  Matrix embed(const TokenSequence& seq, const ForwardContext& ctx,
               EncoderCache* cache_base) const override {
    Matrix x(static_cast<Eigen::Index>(seq.size()), word_embedding_.cols());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const int id = seq.ids[i];
      if (id < 0 || id >= word_embedding_.rows())
        throw ShapeError("token id " + std::to_string(id) + " outside the vocabulary");
      x.row(static_cast<Eigen::Index>(i)) = word_embedding_.row(id);
    }
    auto* cache = static_cast<Cache*>(cache_base);
    if (ctx.dropout_active(config_.dropout)) {
      Matrix mask = nn::dropout_mask(x.rows(), x.cols(), config_.dropout, *ctx.rng);
      x = x.cwiseProduct(mask);
      if (cache) cache->embedding_mask = std::move(mask);
    }
    if (cache) cache->seq = seq;
    return x;
  }

  Vector encode(const Matrix& embeddings, const TokenSequence& seq, const ForwardContext& ctx,
                EncoderCache* cache_base) const override {
    if (embeddings.cols() != static_cast<Eigen::Index>(config_.hidden) ||
        embeddings.rows() != static_cast<Eigen::Index>(seq.size()) || embeddings.rows() == 0)
      throw ShapeError("encode: embeddings " + shape_string(embeddings) + " for " +
                       std::to_string(seq.size()) + " tokens, d_model " +
                       std::to_string(config_.hidden));
    auto* cache = static_cast<Cache*>(cache_base);
    const Eigen::Index L = embeddings.rows();
    Matrix pos = relative_positions(L);
    if (ctx.dropout_active(config_.dropout))
      pos = pos.cwiseProduct(nn::dropout_mask(pos.rows(), pos.cols(), config_.dropout, *ctx.rng));
    const auto seg = segment_difference(seq);
    if (cache) cache->layers.assign(config_.layers, {});
    Matrix h = embeddings;
    for (std::size_t i = 0; i < config_.layers; ++i)
      h = layer_forward(layers_[i], h, pos, seg, ctx, cache ? &cache->layers[i] : nullptr);
    Vector mask = Vector::Ones(h.cols());
    for (Real rate : {config_.dropout, config_.summary_dropout})
      if (ctx.dropout_active(rate)) mask = mask.cwiseProduct(nn::dropout_mask(mask.size(), 1, rate, *ctx.rng));
    Vector last = h.row(L - 1).transpose().cwiseProduct(mask);
    Vector pooled = summary_.forward(last.transpose()).row(0).transpose().array().tanh();
    if (cache) {
      cache->positions = std::move(pos);
      cache->output_mask = std::move(mask);
      cache->last_token = std::move(last);
      cache->pooled = pooled;
    }
    return pooled;
  }

  Matrix encode_backward(const Vector& grad_pooled, const EncoderCache& cache_base,
                         Encoder& grads_base) const override {
    const auto& cache = static_cast<const Cache&>(cache_base);
    auto& grads = static_cast<XlnetEncoder&>(grads_base);
    Vector grad_pre = grad_pooled.array() * (1.0 - cache.pooled.array().square());
    Vector grad_last_used =
        summary_.backward(cache.last_token.transpose(), grad_pre.transpose(), grads.summary_)
            .row(0)
            .transpose();
    const auto L = static_cast<Eigen::Index>(cache.seq.size());
    const auto seg = segment_difference(cache.seq);
    Matrix grad = Matrix::Zero(L, static_cast<Eigen::Index>(config_.hidden));
    grad.row(L - 1) = grad_last_used.cwiseProduct(cache.output_mask).transpose();
    for (std::size_t i = config_.layers; i-- > 0;)
      grad = layer_backward(layers_[i], grad, cache.positions, seg, cache.layers[i],
                            grads.layers_[i]);
    return grad;
  }

  void embed_backward(const Matrix& grad_embeddings, const EncoderCache& cache_base,
                      Encoder& grads_base) const override {
    const auto& cache = static_cast<const Cache&>(cache_base);
    auto& grads = static_cast<XlnetEncoder&>(grads_base);
    Matrix grad = cache.embedding_mask.size() ? Matrix(grad_embeddings.cwiseProduct(cache.embedding_mask))
                                              : grad_embeddings;
    for (Eigen::Index i = 0; i < grad.rows(); ++i)
      grads.word_embedding_.row(cache.seq.ids[static_cast<std::size_t>(i)]) += grad.row(i);
  }

 private:
  using SegmentMatrix = std::vector<std::vector<int>>;

  static SegmentMatrix segment_difference(const TokenSequence& seq) {
    const std::size_t L = seq.size();
    SegmentMatrix seg(L, std::vector<int>(L, 0));
    if (seq.type_ids.empty()) return seg;
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) seg[i][j] = seq.type_ids[i] != seq.type_ids[j] ? 1 : 0;
    return seg;
  }

  Matrix layer_forward(const Layer& p, const Matrix& x, const Matrix& pos, const SegmentMatrix& seg,
                       const ForwardContext& ctx, LayerCache* cache) const {
    const Eigen::Index L = x.rows();
    const auto heads = static_cast<Eigen::Index>(config_.heads);
    const Eigen::Index dh = x.cols() / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
    Matrix q = x * p.q, k = x * p.k, v = x * p.v, r = pos * p.r;
    Matrix attn_vec(L, x.cols());
    if (cache) {
      cache->probs.resize(static_cast<std::size_t>(heads));
      cache->prob_masks.resize(static_cast<std::size_t>(heads));
    }
    for (Eigen::Index a = 0; a < heads; ++a) {
      Matrix qa = q.middleCols(a * dh, dh);
      Matrix ac = (qa.rowwise() + p.r_w_bias.row(a)) * k.middleCols(a * dh, dh).transpose();
      Matrix bd_raw = (qa.rowwise() + p.r_r_bias.row(a)) * r.middleCols(a * dh, dh).transpose();
      Matrix ef_raw =
          (qa.rowwise() + p.r_s_bias.row(a)) * p.seg_embed.middleCols(a * dh, dh).transpose();
      Matrix scores(L, L);
      for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = 0; j < L; ++j)
          scores(i, j) = (ac(i, j) + bd_raw(i, L - i + j) +
                          ef_raw(i, seg[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])) *
                         scale;
      Matrix probs = nn::softmax_rows(scores);
      Matrix used = probs;
      if (ctx.dropout_active(config_.dropout)) {
        Matrix mask = nn::dropout_mask(L, L, config_.dropout, *ctx.rng);
        used = probs.cwiseProduct(mask);
        if (cache) cache->prob_masks[static_cast<std::size_t>(a)] = std::move(mask);
      }
      attn_vec.middleCols(a * dh, dh) = used * v.middleCols(a * dh, dh);
      if (cache) cache->probs[static_cast<std::size_t>(a)] = std::move(probs);
    }
    Matrix attn_out = attn_vec * p.o.transpose();
    if (ctx.dropout_active(config_.dropout)) {
      Matrix mask = nn::dropout_mask(L, attn_out.cols(), config_.dropout, *ctx.rng);
      attn_out = attn_out.cwiseProduct(mask);
      if (cache) cache->attention_mask = std::move(mask);
    }
    Matrix h1 = p.attention_norm.forward(attn_out + x, cache ? &cache->norm1 : nullptr);
    Matrix pre = p.ff1.forward(h1);
    const auto act = config_.activation;
    Matrix activated = pre.unaryExpr([act](Real z) { return nn::activate(act, z); });
    if (ctx.dropout_active(config_.dropout)) {
      Matrix mask = nn::dropout_mask(L, activated.cols(), config_.dropout, *ctx.rng);
      activated = activated.cwiseProduct(mask);
      if (cache) cache->ff_mask1 = std::move(mask);
    }
    Matrix out = p.ff2.forward(activated);
    if (ctx.dropout_active(config_.dropout)) {
      Matrix mask = nn::dropout_mask(L, out.cols(), config_.dropout, *ctx.rng);
      out = out.cwiseProduct(mask);
      if (cache) cache->ff_mask2 = std::move(mask);
    }
    Matrix h2 = p.ff_norm.forward(out + h1, cache ? &cache->norm2 : nullptr);
    if (cache) {
      cache->input = x;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->r = std::move(r);
      cache->attn_vec = std::move(attn_vec);
      cache->hidden1 = std::move(h1);
      cache->pre_activation = std::move(pre);
      cache->activated = std::move(activated);
    }
    return h2;
  }

  Matrix layer_backward(const Layer& p, const Matrix& grad_out, const Matrix& pos,
                        const SegmentMatrix& seg, const LayerCache& c, Layer& g) const {
    const Eigen::Index L = grad_out.rows();
    const auto heads = static_cast<Eigen::Index>(config_.heads);
    const Eigen::Index dh = grad_out.cols() / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

    Matrix grad_sum2 = p.ff_norm.backward(grad_out, c.norm2, g.ff_norm);
    Matrix grad_h1 = grad_sum2;
    Matrix grad_ff = c.ff_mask2.size() ? Matrix(grad_sum2.cwiseProduct(c.ff_mask2)) : grad_sum2;
    Matrix grad_act = p.ff2.backward(c.activated, grad_ff, g.ff2);
    if (c.ff_mask1.size()) grad_act = grad_act.cwiseProduct(c.ff_mask1);
    const auto act = config_.activation;
    Matrix grad_pre = grad_act.cwiseProduct(
        c.pre_activation.unaryExpr([act](Real z) { return nn::activate_derivative(act, z); }));
    grad_h1 += p.ff1.backward(c.hidden1, grad_pre, g.ff1);

    Matrix grad_sum1 = p.attention_norm.backward(grad_h1, c.norm1, g.attention_norm);
    Matrix grad_x = grad_sum1;
    Matrix grad_attn =
        c.attention_mask.size() ? Matrix(grad_sum1.cwiseProduct(c.attention_mask)) : grad_sum1;
    g.o.noalias() += grad_attn.transpose() * c.attn_vec;
    Matrix grad_vec = grad_attn * p.o;

    Matrix grad_q(L, c.q.cols()), grad_k(L, c.k.cols()), grad_v(L, c.v.cols()),
        grad_r(c.r.rows(), c.r.cols());
    for (Eigen::Index a = 0; a < heads; ++a) {
      const auto as = static_cast<std::size_t>(a);
      const Matrix& probs = c.probs[as];
      const bool masked = c.prob_masks[as].size() > 0;
      Matrix used = masked ? Matrix(probs.cwiseProduct(c.prob_masks[as])) : probs;
      auto gv = grad_vec.middleCols(a * dh, dh);
      grad_v.middleCols(a * dh, dh) = used.transpose() * gv;
      Matrix grad_used = gv * c.v.middleCols(a * dh, dh).transpose();
      Matrix grad_probs = masked ? Matrix(grad_used.cwiseProduct(c.prob_masks[as])) : grad_used;
      Matrix gs = nn::softmax_rows_backward(probs, grad_probs) * scale;

      Matrix grad_bd = Matrix::Zero(L, 2 * L), grad_ef = Matrix::Zero(L, 2);
      for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = 0; j < L; ++j) {
          grad_bd(i, L - i + j) += gs(i, j);
          grad_ef(i, seg[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) += gs(i, j);
        }
      Matrix qa = c.q.middleCols(a * dh, dh);
      Matrix from_ac = gs * c.k.middleCols(a * dh, dh);
      Matrix from_bd = grad_bd * c.r.middleCols(a * dh, dh);
      Matrix from_ef = grad_ef * p.seg_embed.middleCols(a * dh, dh);
      grad_q.middleCols(a * dh, dh) = from_ac + from_bd + from_ef;
      g.r_w_bias.row(a) += from_ac.colwise().sum();
      g.r_r_bias.row(a) += from_bd.colwise().sum();
      g.r_s_bias.row(a) += from_ef.colwise().sum();
      grad_k.middleCols(a * dh, dh) = gs.transpose() * (qa.rowwise() + p.r_w_bias.row(a));
      grad_r.middleCols(a * dh, dh) = grad_bd.transpose() * (qa.rowwise() + p.r_r_bias.row(a));
      g.seg_embed.middleCols(a * dh, dh) += grad_ef.transpose() * (qa.rowwise() + p.r_s_bias.row(a));
    }
    g.q.noalias() += c.input.transpose() * grad_q;
    g.k.noalias() += c.input.transpose() * grad_k;
    g.v.noalias() += c.input.transpose() * grad_v;
    g.r.noalias() += pos.transpose() * grad_r;
    grad_x += grad_q * p.q.transpose() + grad_k * p.k.transpose() + grad_v * p.v.transpose();
    return grad_x;
  }

  XlnetConfig config_;
  Matrix word_embedding_;
  std::vector<Layer> layers_;
  nn::Linear summary_;
};

}  // namespace complaints
