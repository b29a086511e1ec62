#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "complaints/error.hpp"
#include "complaints/linalg.hpp"
#include "complaints/nn.hpp"
#include "complaints/params.hpp"

namespace complaints {

/// One tokenized post without padding: every position is a real token.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> type_ids;  // same length as ids

  std::size_t size() const { return ids.size(); }
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  bool dropout_active(Real rate) const { return training && rng != nullptr && rate > 0.0; }
};

/// Per-call activation storage for the backward pass. Concrete encoders
/// derive their own cache type.
struct EncoderCache {
  virtual ~EncoderCache() = default;
};

/// A transformer encoder split at the embedding output so a fusion layer can
/// rewrite the embeddings before the layer stack.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::size_t d_model() const = 0;
  virtual std::unique_ptr<EncoderCache> make_cache() const = 0;

  /// Embedding-layer output (L x d_model).
  virtual Matrix embed(const TokenSequence& seq, const ForwardContext& ctx,
                       EncoderCache* cache) const = 0;

  /// Runs the layer stack over (possibly fused) embeddings and pools the
  /// sequence into one d_model vector.
  virtual Vector encode(const Matrix& embeddings, const TokenSequence& seq,
                        const ForwardContext& ctx, EncoderCache* cache) const = 0;

  /// Backward through the layer stack and pooler; returns dL/d(embeddings).
  virtual Matrix encode_backward(const Vector& grad_pooled, const EncoderCache& cache,
                                 Encoder& grads) const = 0;

  virtual void embed_backward(const Matrix& grad_embeddings, const EncoderCache& cache,
                              Encoder& grads) const = 0;

  virtual void visit(const Visitor& f) = 0;

  /// Same architecture, all parameters zero; used as a gradient buffer.
  virtual std::unique_ptr<Encoder> zeros_like() const = 0;
  virtual std::unique_ptr<Encoder> clone() const = 0;

  Vector forward(const TokenSequence& seq, const ForwardContext& ctx = {}) const {
    return encode(embed(seq, ctx, nullptr), seq, ctx, nullptr);
  }
};

/// Architecture of the absolute-position encoders (BERT, RoBERTa, ALBERT and
/// the in-repo toy encoder).
struct BertConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t intermediate = 128;
  std::size_t max_positions = 64;
  std::size_t type_vocab = 2;
  std::size_t embedding_size = 0;  // 0 means == hidden; ALBERT factorizes it
  bool share_layers = false;       // ALBERT cross-layer sharing
  std::size_t position_offset = 0; // RoBERTa starts positions at padding_idx + 1
  bool pooler = true;              // dense + tanh over the first token
  nn::Activation activation = nn::Activation::gelu;
  Real layer_norm_eps = 1e-12;
  Real hidden_dropout = 0.1;
  Real attention_dropout = 0.1;
  Real initializer_range = 0.02;

  std::size_t embedding_width() const { return embedding_size ? embedding_size : hidden; }
};

class BertEncoder final : public Encoder {
 public:
  struct Layer {
    nn::Linear query, key, value, attention_out;
    nn::LayerNorm attention_norm;
    nn::Linear intermediate, output;
    nn::LayerNorm output_norm;

    Layer() = default;
    Layer(std::size_t d, std::size_t ff, Real eps)
        : query(d, d), key(d, d), value(d, d), attention_out(d, d), attention_norm(d, eps),
          intermediate(d, ff), output(ff, d), output_norm(d, eps) {}

    void visit(const std::string& p, const Visitor& f) {
      query.visit(p + ".attention.self.query", f);
      key.visit(p + ".attention.self.key", f);
      value.visit(p + ".attention.self.value", f);
      attention_out.visit(p + ".attention.output.dense", f);
      attention_norm.visit(p + ".attention.output.LayerNorm", f);
      intermediate.visit(p + ".intermediate.dense", f);
      output.visit(p + ".output.dense", f);
      output_norm.visit(p + ".output.LayerNorm", f);
    }
  };

  explicit BertEncoder(BertConfig config) : config_(std::move(config)) {
    if (config_.vocab_size == 0) throw ConfigError("encoder vocab_size must be positive");
    if (config_.hidden % config_.heads != 0)
      throw ConfigError("encoder hidden size must be divisible by the head count");
    const auto e = static_cast<Eigen::Index>(config_.embedding_width());
    word_embeddings_ = Matrix::Zero(static_cast<Eigen::Index>(config_.vocab_size), e);
    position_embeddings_ = Matrix::Zero(static_cast<Eigen::Index>(config_.max_positions), e);
    token_type_embeddings_ = Matrix::Zero(static_cast<Eigen::Index>(config_.type_vocab), e);
    embedding_norm_ = nn::LayerNorm(config_.embedding_width(), config_.layer_norm_eps);
    if (config_.embedding_width() != config_.hidden)
      embedding_map_ = nn::Linear(config_.embedding_width(), config_.hidden);
    const std::size_t unique = config_.share_layers ? 1 : config_.layers;
    for (std::size_t i = 0; i < unique; ++i)
      layers_.emplace_back(config_.hidden, config_.intermediate, config_.layer_norm_eps);
    if (config_.pooler) pooler_ = nn::Linear(config_.hidden, config_.hidden);
  }

  const BertConfig& config() const { return config_; }
  std::size_t d_model() const override { return config_.hidden; }

  /// Normal(0, initializer_range) weights, zero biases, unit LayerNorm gains.
  void initialize(std::mt19937_64& rng) {
    std::normal_distribution<Real> n(0.0, config_.initializer_range);
    visit([&](TensorRef t) {
      const bool is_norm = t.name.find("LayerNorm") != std::string::npos;
      const bool is_bias = t.name.size() >= 4 && t.name.compare(t.name.size() - 4, 4, "bias") == 0;
      for (Real& x : t.data) x = is_norm ? (is_bias ? 0.0 : 1.0) : is_bias ? 0.0 : n(rng);
    });
  }

  void visit(const Visitor& f) override {
    f(tensor_ref("embeddings.word_embeddings.weight", word_embeddings_));
    f(tensor_ref("embeddings.position_embeddings.weight", position_embeddings_));
    f(tensor_ref("embeddings.token_type_embeddings.weight", token_type_embeddings_));
    embedding_norm_.visit("embeddings.LayerNorm", f);
    if (embedding_map_) embedding_map_->visit("encoder.embedding_hidden_mapping_in", f);
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].visit("encoder.layer." + std::to_string(i), f);
    if (pooler_) pooler_->visit("pooler.dense", f);
  }

  std::unique_ptr<Encoder> zeros_like() const override {
    auto z = std::make_unique<BertEncoder>(config_);
    zero_out(*z);
    return z;
  }
  std::unique_ptr<Encoder> clone() const override { return std::make_unique<BertEncoder>(*this); }

  struct LayerCache {
    Matrix input;
    Matrix q, k, v;
    std::vector<Matrix> probs;        // per head, after softmax
    std::vector<Matrix> prob_masks;   // per head attention dropout
    Matrix context;                   // concat of heads
    Matrix attention_mask;            // hidden dropout on attention output
    nn::LayerNorm::Cache norm1;
    Matrix hidden1;
    Matrix pre_activation, activated;
    Matrix output_mask;
    nn::LayerNorm::Cache norm2;
  };

  struct Cache final : EncoderCache {
    TokenSequence seq;
    nn::LayerNorm::Cache embedding_norm;
    Matrix embedding_mask;
    Matrix embedding_pre_map;  // input of the ALBERT mapping
    std::vector<LayerCache> layers;
    Vector first_token;
    Vector pooled;
  };

  std::unique_ptr<EncoderCache> make_cache() const override { return std::make_unique<Cache>(); }

  Matrix embed(const TokenSequence& seq, const ForwardContext& ctx,
               EncoderCache* cache_base) const override {
    const auto L = static_cast<Eigen::Index>(seq.size());
    if (seq.size() + config_.position_offset > config_.max_positions)
      throw ShapeError("sequence of " + std::to_string(seq.size()) +
                       " tokens exceeds the encoder's position table");
    Matrix x(L, static_cast<Eigen::Index>(config_.embedding_width()));
    for (Eigen::Index i = 0; i < L; ++i) {
      const int id = seq.ids[static_cast<std::size_t>(i)];
      const int type = seq.type_ids.empty() ? 0 : seq.type_ids[static_cast<std::size_t>(i)];
      if (id < 0 || id >= word_embeddings_.rows())
        throw ShapeError("token id " + std::to_string(id) + " outside the vocabulary");
      if (type < 0 || type >= token_type_embeddings_.rows())
        throw ShapeError("token type " + std::to_string(type) + " outside the type vocabulary");
      x.row(i) = word_embeddings_.row(id) +
                 position_embeddings_.row(i + static_cast<Eigen::Index>(config_.position_offset)) +
                 token_type_embeddings_.row(type);
    }
    auto* cache = static_cast<Cache*>(cache_base);
    Matrix y = embedding_norm_.forward(x, cache ? &cache->embedding_norm : nullptr);
    if (ctx.dropout_active(config_.hidden_dropout)) {
      Matrix mask = nn::dropout_mask(y.rows(), y.cols(), config_.hidden_dropout, *ctx.rng);
      y = y.cwiseProduct(mask);
      if (cache) cache->embedding_mask = std::move(mask);
    }
    if (cache) cache->seq = seq;
    if (embedding_map_) {
      if (cache) cache->embedding_pre_map = y;
      y = embedding_map_->forward(y);
    }
    return y;
  }

  Vector encode(const Matrix& embeddings, const TokenSequence& seq, const ForwardContext& ctx,
                EncoderCache* cache_base) const override {
    if (embeddings.cols() != static_cast<Eigen::Index>(config_.hidden) ||
        embeddings.rows() != static_cast<Eigen::Index>(seq.size()) || embeddings.rows() == 0)
      throw ShapeError("encode: embeddings " + shape_string(embeddings) + " for " +
                       std::to_string(seq.size()) + " tokens, d_model " +
                       std::to_string(config_.hidden));
    auto* cache = static_cast<Cache*>(cache_base);
    if (cache) cache->layers.assign(config_.layers, {});
    Matrix h = embeddings;
    for (std::size_t i = 0; i < config_.layers; ++i)
      h = layer_forward(layer(i), h, ctx, cache ? &cache->layers[i] : nullptr);
    Vector first = h.row(0).transpose();
    Vector pooled = first;
    if (pooler_) pooled = pooler_->forward(first.transpose()).row(0).transpose().array().tanh();
    if (cache) {
      cache->first_token = std::move(first);
      cache->pooled = pooled;
    }
    return pooled;
  }

  Matrix encode_backward(const Vector& grad_pooled, const EncoderCache& cache_base,
                         Encoder& grads_base) const override {
    const auto& cache = static_cast<const Cache&>(cache_base);
    auto& grads = static_cast<BertEncoder&>(grads_base);
    Vector grad_first = grad_pooled;
    if (pooler_) {
      Vector grad_pre = grad_pooled.array() * (1.0 - cache.pooled.array().square());
      grad_first = pooler_->backward(cache.first_token.transpose(), grad_pre.transpose(),
                                     *grads.pooler_)
                       .row(0)
                       .transpose();
    }
    const auto L = static_cast<Eigen::Index>(cache.seq.size());
    Matrix grad = Matrix::Zero(L, static_cast<Eigen::Index>(config_.hidden));
    grad.row(0) = grad_first.transpose();
    for (std::size_t i = config_.layers; i-- > 0;)
      grad = layer_backward(layer(i), grad, cache.layers[i], grads.layer_mut(i));
    return grad;
  }

  void embed_backward(const Matrix& grad_embeddings, const EncoderCache& cache_base,
                      Encoder& grads_base) const override {
    const auto& cache = static_cast<const Cache&>(cache_base);
    auto& grads = static_cast<BertEncoder&>(grads_base);
    Matrix grad = grad_embeddings;
    if (embedding_map_)
      grad = embedding_map_->backward(cache.embedding_pre_map, grad, *grads.embedding_map_);
    if (cache.embedding_mask.size() > 0) grad = grad.cwiseProduct(cache.embedding_mask);
    grad = embedding_norm_.backward(grad, cache.embedding_norm, grads.embedding_norm_);
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
      const auto s = static_cast<std::size_t>(i);
      grads.word_embeddings_.row(cache.seq.ids[s]) += grad.row(i);
      grads.position_embeddings_.row(i + static_cast<Eigen::Index>(config_.position_offset)) +=
          grad.row(i);
      grads.token_type_embeddings_.row(cache.seq.type_ids.empty() ? 0 : cache.seq.type_ids[s]) +=
          grad.row(i);
    }
  }

 private:
  const Layer& layer(std::size_t depth) const { return layers_[config_.share_layers ? 0 : depth]; }
  Layer& layer_mut(std::size_t depth) { return layers_[config_.share_layers ? 0 : depth]; }

  Matrix layer_forward(const Layer& p, const Matrix& x, const ForwardContext& ctx,
                       LayerCache* cache) const {
    const auto heads = static_cast<Eigen::Index>(config_.heads);
    const Eigen::Index dh = x.cols() / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
    Matrix q = p.query.forward(x), k = p.key.forward(x), v = p.value.forward(x);
    Matrix context(x.rows(), x.cols());
    if (cache) {
      cache->probs.resize(static_cast<std::size_t>(heads));
      cache->prob_masks.resize(static_cast<std::size_t>(heads));
    }
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      Matrix probs = nn::softmax_rows(scores);
      Matrix used = probs;
      if (ctx.dropout_active(config_.attention_dropout)) {
        Matrix mask = nn::dropout_mask(probs.rows(), probs.cols(), config_.attention_dropout, *ctx.rng);
        used = probs.cwiseProduct(mask);
        if (cache) cache->prob_masks[static_cast<std::size_t>(h)] = std::move(mask);
      }
      context.middleCols(h * dh, dh) = used * v.middleCols(h * dh, dh);
      if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(probs);
    }
    Matrix attn = p.attention_out.forward(context);
    if (ctx.dropout_active(config_.hidden_dropout)) {
      Matrix mask = nn::dropout_mask(attn.rows(), attn.cols(), config_.hidden_dropout, *ctx.rng);
      attn = attn.cwiseProduct(mask);
      if (cache) cache->attention_mask = std::move(mask);
    }
    Matrix h1 = p.attention_norm.forward(x + attn, cache ? &cache->norm1 : nullptr);
    Matrix pre = p.intermediate.forward(h1);
    const auto act = config_.activation;
    Matrix activated = pre.unaryExpr([act](Real z) { return nn::activate(act, z); });
    Matrix out = p.output.forward(activated);
    if (ctx.dropout_active(config_.hidden_dropout)) {
      Matrix mask = nn::dropout_mask(out.rows(), out.cols(), config_.hidden_dropout, *ctx.rng);
      out = out.cwiseProduct(mask);
      if (cache) cache->output_mask = std::move(mask);
    }
    Matrix h2 = p.output_norm.forward(h1 + out, cache ? &cache->norm2 : nullptr);
    if (cache) {
      cache->input = x;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->context = std::move(context);
      cache->hidden1 = std::move(h1);
      cache->pre_activation = std::move(pre);
      cache->activated = std::move(activated);
    }
    return h2;
  }

  Matrix layer_backward(const Layer& p, const Matrix& grad_out, const LayerCache& c,
                        Layer& g) const {
    const auto heads = static_cast<Eigen::Index>(config_.heads);
    const Eigen::Index dh = grad_out.cols() / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

    Matrix grad_sum2 = p.output_norm.backward(grad_out, c.norm2, g.output_norm);
    Matrix grad_h1 = grad_sum2;
    Matrix grad_ffn = c.output_mask.size() ? grad_sum2.cwiseProduct(c.output_mask) : grad_sum2;
    Matrix grad_act = p.output.backward(c.activated, grad_ffn, g.output);
    const auto act = config_.activation;
    Matrix grad_pre = grad_act.cwiseProduct(
        c.pre_activation.unaryExpr([act](Real z) { return nn::activate_derivative(act, z); }));
    grad_h1 += p.intermediate.backward(c.hidden1, grad_pre, g.intermediate);

    Matrix grad_sum1 = p.attention_norm.backward(grad_h1, c.norm1, g.attention_norm);
    Matrix grad_x = grad_sum1;
    Matrix grad_attn =
        c.attention_mask.size() ? grad_sum1.cwiseProduct(c.attention_mask) : grad_sum1;
    Matrix grad_context = p.attention_out.backward(c.context, grad_attn, g.attention_out);

    Matrix grad_q(c.q.rows(), c.q.cols()), grad_k(c.k.rows(), c.k.cols()),
        grad_v(c.v.rows(), c.v.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      const Matrix& probs = c.probs[hs];
      const bool masked = c.prob_masks[hs].size() > 0;
      Matrix used = masked ? Matrix(probs.cwiseProduct(c.prob_masks[hs])) : probs;
      auto gc = grad_context.middleCols(h * dh, dh);
      grad_v.middleCols(h * dh, dh) = used.transpose() * gc;
      Matrix grad_used = gc * c.v.middleCols(h * dh, dh).transpose();
      Matrix grad_probs = masked ? Matrix(grad_used.cwiseProduct(c.prob_masks[hs])) : grad_used;
      Matrix grad_scores = nn::softmax_rows_backward(probs, grad_probs) * scale;
      grad_q.middleCols(h * dh, dh) = grad_scores * c.k.middleCols(h * dh, dh);
      grad_k.middleCols(h * dh, dh) = grad_scores.transpose() * c.q.middleCols(h * dh, dh);
    }
    grad_x += p.query.backward(c.input, grad_q, g.query);
    grad_x += p.key.backward(c.input, grad_k, g.key);
    grad_x += p.value.backward(c.input, grad_v, g.value);
    return grad_x;
  }

  BertConfig config_;
  Matrix word_embeddings_;
  Matrix position_embeddings_;
  Matrix token_type_embeddings_;
  nn::LayerNorm embedding_norm_;
  std::optional<nn::Linear> embedding_map_;
  std::vector<Layer> layers_;
  std::optional<nn::Linear> pooler_;
};

}  // namespace complaints
