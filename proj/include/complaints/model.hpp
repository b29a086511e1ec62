#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "complaints/adapters.hpp"
#include "complaints/corpus.hpp"
#include "complaints/error.hpp"
#include "complaints/features.hpp"
#include "complaints/fusion.hpp"
#include "complaints/log.hpp"
#include "complaints/safetensors.hpp"
#include "complaints/seeding.hpp"

namespace complaints {

enum class FusionMode { none, emotion, topics, emotion_topics };

inline std::string_view to_string(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::emotion: return "emotion";
    case FusionMode::topics: return "topics";
    case FusionMode::emotion_topics: return "emotion_topics";
  }
  return "";
}

inline std::optional<FusionMode> parse_fusion_mode(std::string_view s) {
  if (s == "none") return FusionMode::none;
  if (auto f = parse_feature_mode(s)) return static_cast<FusionMode>(static_cast<int>(*f) + 1);
  return std::nullopt;
}

inline std::optional<FeatureMode> feature_mode(FusionMode m) {
  if (m == FusionMode::none) return std::nullopt;
  return static_cast<FeatureMode>(static_cast<int>(m) - 1);
}

inline std::string_view to_string(fusion::Injection i) {
  return i == fusion::Injection::per_token ? "per_token" : "cls_only";
}

inline std::optional<fusion::Injection> parse_injection(std::string_view s) {
  if (s == "per_token") return fusion::Injection::per_token;
  if (s == "cls_only") return fusion::Injection::cls_only;
  return std::nullopt;
}

struct TrainConfig {
  Real learning_rate = 1e-5;
  std::vector<Real> learning_rate_grid = {1e-4, 1e-5, 2e-5, 1e-6};
  bool grid_search = true;
  std::size_t max_len = kMaxSequenceLength;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  FusionMode fusion = FusionMode::none;
  bool distant_stage = false;
  std::size_t feature_size = 200;
  std::vector<std::size_t> feature_size_grid = {200, 400, 768};
  fusion::Injection injection = fusion::Injection::per_token;
  Real beta = 1.0;
  Real feature_dropout = 0.1;
  Real weight_decay = 0.01;
  Real warmup_fraction = 0.1;
  Real adam_beta1 = 0.9;
  Real adam_beta2 = 0.999;
  Real adam_epsilon = 1e-8;

  void validate() const {
    auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError("train." + key + ": " + msg); };
    if (!(learning_rate > 0)) fail("learning_rate", "must be positive");
    for (Real lr : learning_rate_grid)
      if (!(lr > 0)) fail("learning_rate_grid", "entries must be positive");
    if (grid_search && learning_rate_grid.empty()) fail("learning_rate_grid", "is empty");
    if (max_len < 3) fail("max_len", "must be at least 3");
    if (batch_size == 0) fail("batch_size", "must be positive");
    if (max_epochs == 0) fail("max_epochs", "must be positive");
    if (patience == 0) fail("patience", "must be positive");
    if (!fusion::valid_feature_size(feature_size)) fail("feature_size", "must be 200, 400 or 768");
    for (auto h : feature_size_grid)
      if (!fusion::valid_feature_size(h)) fail("feature_size_grid", "entries must be 200, 400 or 768");
    if (!(beta > 0)) fail("beta", "must be positive");
    if (feature_dropout < 0 || feature_dropout >= 1) fail("feature_dropout", "must be in [0, 1)");
    if (warmup_fraction < 0 || warmup_fraction > 1) fail("warmup_fraction", "must be in [0, 1]");
    if (weight_decay < 0) fail("weight_decay", "must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"learning_rate_grid", c.learning_rate_grid},
       {"grid_search", c.grid_search},
       {"max_len", c.max_len},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"seed", c.seed},
       {"fusion", to_string(c.fusion)},
       {"distant_stage", c.distant_stage},
       {"feature_size", c.feature_size},
       {"feature_size_grid", c.feature_size_grid},
       {"injection", to_string(c.injection)},
       {"beta", c.beta},
       {"feature_dropout", c.feature_dropout},
       {"optimizer", {{"name", "adamw"},
                      {"weight_decay", c.weight_decay},
                      {"warmup_fraction", c.warmup_fraction},
                      {"schedule", "linear warmup, linear decay"},
                      {"beta1", c.adam_beta1},
                      {"beta2", c.adam_beta2},
                      {"epsilon", c.adam_epsilon}}}};
}

/// Reads the keys present in `j` over the defaults in `c`; unknown keys and
/// bad values throw ConfigError naming `prefix.key`.
inline void merge_json(TrainConfig& c, const nlohmann::json& j, const std::string& prefix = "train") {
  if (!j.is_object()) throw ConfigError(prefix + ": expected an object");
  auto key = [&](const std::string& k) { return prefix + "." + k; };
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "learning_rate") c.learning_rate = v.get<Real>();
      else if (k == "learning_rate_grid") c.learning_rate_grid = v.get<std::vector<Real>>();
      else if (k == "grid_search") c.grid_search = v.get<bool>();
      else if (k == "max_len") c.max_len = v.get<std::size_t>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (k == "patience") c.patience = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "fusion") {
        auto m = parse_fusion_mode(v.get<std::string>());
        if (!m) throw ConfigError(key(k) + ": unknown fusion mode '" + v.get<std::string>() + "'");
        c.fusion = *m;
      } else if (k == "distant_stage") c.distant_stage = v.get<bool>();
      else if (k == "feature_size") c.feature_size = v.get<std::size_t>();
      else if (k == "feature_size_grid") c.feature_size_grid = v.get<std::vector<std::size_t>>();
      else if (k == "injection") {
        auto m = parse_injection(v.get<std::string>());
        if (!m) throw ConfigError(key(k) + ": unknown injection '" + v.get<std::string>() + "'");
        c.injection = *m;
      } else if (k == "beta") c.beta = v.get<Real>();
      else if (k == "feature_dropout") c.feature_dropout = v.get<Real>();
      else if (k == "optimizer") {
        for (const auto& [ok, ov] : v.items()) {
          if (ok == "weight_decay") c.weight_decay = ov.get<Real>();
          else if (ok == "warmup_fraction") c.warmup_fraction = ov.get<Real>();
          else if (ok == "beta1") c.adam_beta1 = ov.get<Real>();
          else if (ok == "beta2") c.adam_beta2 = ov.get<Real>();
          else if (ok == "epsilon") c.adam_epsilon = ov.get<Real>();
          else if (ok != "name" && ok != "schedule") throw ConfigError(key("optimizer." + ok) + ": unknown key");
        }
      } else {
        throw ConfigError(key(k) + ": unknown key");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(prefix + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

/// Single logit with a sigmoid.
struct ClassifierHead {
  Vector weight;
  Real bias = 0.0;

  ClassifierHead() = default;
  explicit ClassifierHead(std::size_t d) : weight(Vector::Zero(static_cast<Eigen::Index>(d))) {}

  Real logit(const Vector& pooled) const { return weight.dot(pooled) + bias; }

  void visit(const Visitor& f) {
    f(tensor_ref("head.weight", weight));
    f(tensor_ref("head.bias", bias));
  }
};

/// Sigmoid kept inside the open interval (0, 1).
inline Real probability(Real logit) {
  constexpr Real lo = std::numeric_limits<Real>::min();
  const Real hi = std::nextafter(1.0, 0.0);
  return std::clamp(sigmoid(logit), lo, hi);
}

inline Label decide(Real probability) { return probability >= 0.5 ? Label::complaint : Label::non_complaint; }

/// Encoder, head and optional fusion layer.
struct Classifier {
  EncoderAdapter adapter;
  ClassifierHead head;
  std::optional<fusion::FusionParams> fusion;
  FusionMode fusion_mode = FusionMode::none;
  fusion::Injection injection = fusion::Injection::per_token;
  Real feature_dropout = 0.0;

  void visit(const Visitor& f) {
    adapter.encoder->visit([&](TensorRef t) {
      t.name = "encoder." + t.name;
      f(std::move(t));
    });
    head.visit(f);
    if (fusion)
      fusion->visit([&](TensorRef t) {
        t.name = "fusion." + t.name;
        f(std::move(t));
      });
  }

  /// Same structure, all parameters zero.
  Classifier zeros_like() const {
    Classifier z;
    z.adapter.name = adapter.name;
    z.adapter.tokenizer = adapter.tokenizer;
    z.adapter.encoder = adapter.encoder->zeros_like();
    z.head = ClassifierHead(adapter.d_model());
    z.fusion = fusion;
    z.fusion_mode = fusion_mode;
    z.injection = injection;
    if (z.fusion) zero_out(*z.fusion);
    return z;
  }
};

inline Classifier make_classifier(EncoderAdapter adapter, const TrainConfig& config, std::uint64_t seed) {
  Classifier m;
  std::mt19937_64 rng(derive_seed(seed, "classifier-init"));
  m.head = ClassifierHead(adapter.d_model());
  std::normal_distribution<Real> n(0.0, 0.02);
  for (auto& w : m.head.weight) w = n(rng);
  if (auto mode = feature_mode(config.fusion)) {
    m.fusion = fusion::FusionParams(raw_dimension(*mode), config.feature_size, adapter.d_model(), config.beta);
    fusion::initialize(*m.fusion, rng);
  }
  m.adapter = std::move(adapter);
  m.fusion_mode = config.fusion;
  m.injection = config.injection;
  m.feature_dropout = config.feature_dropout;
  return m;
}

/// One tokenized example with its optional feature bundle.
struct Example {
  TokenSequence tokens;
  std::optional<FeatureBundle> features;
  Real target = 0.0;
};

template <typename PostRange>
std::vector<Example> make_examples(const PostRange& posts, const Classifier& model, std::size_t max_len,
                                   const FeatureExtractor* features) {
  if (model.fusion && !features) throw UsageError("fusion model requires feature bundles");
  std::vector<Example> out;
  for (const auto& post : posts) {
    Example e;
    e.tokens = model.adapter.tokenizer->encode(post.text, max_len);
    if (model.fusion) {
      if (features->mode() != *feature_mode(model.fusion_mode))
        throw UsageError("feature bundles are '" + std::string(to_string(features->mode())) +
                         "' but the model fuses '" + std::string(to_string(model.fusion_mode)) + "'");
      e.features = (*features)(post.text);
    }
    e.target = post.is_complaint() ? 1.0 : 0.0;
    out.push_back(std::move(e));
  }
  return out;
}

namespace detail {

struct ForwardTrace {
  std::unique_ptr<EncoderCache> encoder;
  fusion::ProjectionCache projection;
  fusion::GateCache gate;
  Vector feature_mask;
  Vector pooled;
};

inline Real forward_logit(const Classifier& m, const Example& ex, const ForwardContext& ctx, ForwardTrace* trace) {
  if (m.fusion && !ex.features) throw UsageError("fusion model requires feature bundles");
  const Encoder& enc = *m.adapter.encoder;
  EncoderCache* cache = trace ? trace->encoder.get() : nullptr;
  Matrix emb = enc.embed(ex.tokens, ctx, cache);
  if (m.fusion) {
    Vector f = fusion::project_features(ex.features->raw(), m.fusion->projection, trace ? &trace->projection : nullptr);
    if (ctx.dropout_active(m.feature_dropout)) {
      Vector mask = fusion::dropout_mask(f.size(), m.feature_dropout, *ctx.rng);
      f = f.cwiseProduct(mask);
      if (trace) trace->feature_mask = std::move(mask);
    }
    emb = fusion::shifting_gate(emb, f, m.fusion->gate, m.injection, trace ? &trace->gate : nullptr);
  }
  Vector pooled = enc.encode(emb, ex.tokens, ctx, cache);
  const Real logit = m.head.logit(pooled);
  if (trace) trace->pooled = std::move(pooled);
  return logit;
}

}  // namespace detail

/// Probability of the complaint class for one example (evaluation mode).
inline Real predict_probability(const Classifier& m, const Example& ex) {
  return probability(detail::forward_logit(m, ex, {}, nullptr));
}

/// Adds d(loss)/d(params) for one example into `grads`; returns the loss.
inline Real accumulate_gradient(const Classifier& m, const Example& ex, const ForwardContext& ctx, Classifier& grads,
                                Real weight = 1.0) {
  detail::ForwardTrace trace;
  trace.encoder = m.adapter.encoder->make_cache();
  const Real logit = detail::forward_logit(m, ex, ctx, &trace);
  const Real loss = bce_with_logit(logit, ex.target);
  const Real grad_logit = weight * (sigmoid(logit) - ex.target);
  grads.head.weight += grad_logit * trace.pooled;
  grads.head.bias += grad_logit;
  Vector grad_pooled = grad_logit * m.head.weight;
  const Encoder& enc = *m.adapter.encoder;
  Matrix grad_emb = enc.encode_backward(grad_pooled, *trace.encoder, *grads.adapter.encoder);
  if (m.fusion) {
    auto g = fusion::shifting_gate_backward(grad_emb, trace.gate, m.fusion->gate, grads.fusion->gate);
    grad_emb = std::move(g.embeddings);
    Vector grad_f = g.feature;
    if (trace.feature_mask.size()) grad_f = grad_f.cwiseProduct(trace.feature_mask);
    fusion::project_features_backward(grad_f, trace.projection, m.fusion->projection, grads.fusion->projection);
  }
  enc.embed_backward(grad_emb, *trace.encoder, *grads.adapter.encoder);
  return loss;
}

/// Mean binary cross-entropy in evaluation mode.
inline Real mean_loss(const Classifier& m, const std::vector<Example>& examples) {
  if (examples.empty()) throw UsageError("mean_loss: no examples");
  Real total = 0;
  for (const auto& ex : examples) total += bce_with_logit(detail::forward_logit(m, ex, {}, nullptr), ex.target);
  return total / static_cast<Real>(examples.size());
}

// ---------------------------------------------------------------------------

/// AdamW with decoupled weight decay and a linear warmup / linear decay
/// schedule. Biases and normalization gains are not decayed.
class AdamW {
 public:
  AdamW(const TrainConfig& config, std::size_t total_steps)
      : config_(config), total_steps_(std::max<std::size_t>(total_steps, 1)) {
    warmup_steps_ = static_cast<std::size_t>(std::ceil(config.warmup_fraction * static_cast<Real>(total_steps_)));
  }

  Real learning_rate(std::size_t step) const {
    const Real base = config_.learning_rate;
    if (step < warmup_steps_) return base * static_cast<Real>(step + 1) / static_cast<Real>(warmup_steps_);
    if (total_steps_ <= warmup_steps_) return base;
    const Real remaining = static_cast<Real>(total_steps_ - std::min(step, total_steps_)) /
                           static_cast<Real>(total_steps_ - warmup_steps_);
    return base * std::max<Real>(remaining, 0.0);
  }

  template <typename Params>
  void step(Params& params, Params& grads) {
    auto p = collect_tensors(params);
    auto g = collect_tensors(grads);
    if (first_.empty()) {
      for (const auto& t : p) {
        first_.emplace_back(t.data.size(), 0.0);
        second_.emplace_back(t.data.size(), 0.0);
        decay_.push_back(decays(t.name));
      }
    }
    if (p.size() != first_.size() || g.size() != p.size()) throw ShapeError("AdamW: parameter structure changed");
    ++t_;
    const Real lr = learning_rate(t_ - 1);
    const Real b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const Real c1 = 1.0 - std::pow(b1, static_cast<Real>(t_));
    const Real c2 = 1.0 - std::pow(b2, static_cast<Real>(t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& m = first_[k];
      auto& v = second_[k];
      const Real decay = decay_[k] ? config_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p[k].data.size(); ++i) {
        const Real gi = g[k].data[i];
        m[i] = b1 * m[i] + (1 - b1) * gi;
        v[i] = b2 * v[i] + (1 - b2) * gi * gi;
        Real& x = p[k].data[i];
        x -= lr * decay * x;
        x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }
  std::size_t warmup_steps() const { return warmup_steps_; }

  static bool decays(const std::string& name) {
    const bool bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    const bool norm = name.find("LayerNorm") != std::string::npos || name.find("layer_norm") != std::string::npos;
    return !bias && !norm;
  }

 private:
  TrainConfig config_;
  std::size_t total_steps_;
  std::size_t warmup_steps_ = 0;
  std::size_t t_ = 0;
  std::vector<std::vector<Real>> first_, second_;
  std::vector<bool> decay_;
};

/// Stops after `patience` consecutive epochs without a lower validation loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records an epoch's loss; returns true when it is the best so far.
  bool update(std::size_t epoch, Real loss) {
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  Real best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  Real best_loss_ = std::numeric_limits<Real>::infinity();
};

struct StageRecord {
  std::string name;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 0 means the initial parameters were best
  Real initial_val_loss = 0.0;
  Real best_val_loss = 0.0;
  std::vector<Real> train_loss;
  std::vector<Real> val_loss;
};

inline void to_json(nlohmann::json& j, const StageRecord& s) {
  j = {{"name", s.name},           {"train_size", s.train_size}, {"val_size", s.val_size},
       {"epochs_run", s.epochs_run}, {"best_epoch", s.best_epoch}, {"initial_val_loss", s.initial_val_loss},
       {"best_val_loss", s.best_val_loss}, {"train_loss", s.train_loss}, {"val_loss", s.val_loss}};
}

inline void from_json(const nlohmann::json& j, StageRecord& s) {
  s.name = j.at("name");
  s.train_size = j.at("train_size");
  s.val_size = j.at("val_size");
  s.epochs_run = j.at("epochs_run");
  s.best_epoch = j.at("best_epoch");
  s.initial_val_loss = j.at("initial_val_loss");
  s.best_val_loss = j.at("best_val_loss");
  s.train_loss = j.at("train_loss").get<std::vector<Real>>();
  s.val_loss = j.at("val_loss").get<std::vector<Real>>();
}

struct Checkpoint {
  Classifier model;
  TrainConfig config;
  std::vector<StageRecord> stages;

  Real final_val_loss() const { return stages.empty() ? 0.0 : stages.back().best_val_loss; }
};

namespace detail {

inline void check_disjoint(const Posts& train, const Posts& val) {
  if (train.empty()) throw UsageError("fit: empty training set");
  if (val.empty()) throw UsageError("fit: empty validation set");
  std::set<std::string_view> ids;
  for (const auto& p : train) ids.insert(p.id);
  for (const auto& p : val)
    if (ids.count(p.id)) throw UsageError("fit: post '" + p.id + "' is in both training and validation sets");
}

}  // namespace detail

/// Trains `init` on `train`, early-stopping on `val` loss; returns the
/// parameters with the lowest validation loss seen (including the initial
/// parameters when no epoch improves on them).
inline Checkpoint fit_from(Classifier init, const Posts& train, const Posts& val, const TrainConfig& config,
                           const FeatureExtractor* features, const std::string& stage_name = "gold") {
  config.validate();
  detail::check_disjoint(train, val);
  const auto train_ex = make_examples(train, init, config.max_len, features);
  const auto val_ex = make_examples(val, init, config.max_len, features);

  std::mt19937_64 rng(derive_seed(config.seed, "train-" + stage_name));
  const std::size_t batches = (train_ex.size() + config.batch_size - 1) / config.batch_size;
  AdamW optimizer(config, batches * config.max_epochs);
  Classifier model = std::move(init);
  Classifier grads = model.zeros_like();

  StageRecord record;
  record.name = stage_name;
  record.train_size = train_ex.size();
  record.val_size = val_ex.size();
  record.initial_val_loss = mean_loss(model, val_ex);
  EarlyStopping stopper(config.patience);
  stopper.update(0, record.initial_val_loss);
  Classifier best = model;

  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Real epoch_loss = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(lo + config.batch_size, order.size());
      zero_out(grads);
      Real batch_loss = 0;
      ForwardContext ctx{true, &rng};
      for (std::size_t i = lo; i < hi; ++i)
        batch_loss += accumulate_gradient(model, train_ex[order[i]], ctx, grads, 1.0 / static_cast<Real>(hi - lo));
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + " (stage " + stage_name + ")");
      std::string bad;
      if (!params_finite(grads, &bad))
        throw NumericError("non-finite gradient for '" + bad + "' at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + " (stage " + stage_name + ")");
      optimizer.step(model, grads);
      epoch_loss += batch_loss;
    }
    const Real val_loss = mean_loss(model, val_ex);
    if (!std::isfinite(val_loss))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) + " (stage " + stage_name + ")");
    record.train_loss.push_back(epoch_loss / static_cast<Real>(train_ex.size()));
    record.val_loss.push_back(val_loss);
    record.epochs_run = epoch;
    log::debug("{} epoch {}: train loss {:.5f}, val loss {:.5f}", stage_name, epoch, record.train_loss.back(), val_loss);
    if (stopper.update(epoch, val_loss)) best = model;
    if (stopper.should_stop()) break;
  }
  record.best_epoch = stopper.best_epoch();
  record.best_val_loss = stopper.best_loss();
  return Checkpoint{std::move(best), config, {std::move(record)}};
}

inline Checkpoint fit(const Posts& train, const Posts& val, const TrainConfig& config, const EncoderAdapter& adapter,
                      const FeatureExtractor* features = nullptr) {
  config.validate();
  return fit_from(make_classifier(adapter, config, config.seed), train, val, config, features);
}

/// Deterministic 90/10 split of the distant corpus, stratified by label.
inline std::pair<Posts, Posts> split_distant(const Posts& distant, std::uint64_t seed) {
  Posts pos, neg;
  for (const auto& p : distant) (p.is_complaint() ? pos : neg).push_back(p);
  std::mt19937_64 rng(derive_seed(seed, "distant-split"));
  Posts train, val;
  for (Posts* group : {&pos, &neg}) {
    std::sort(group->begin(), group->end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::shuffle(group->begin(), group->end(), rng);
    const std::size_t held = group->size() / 10;
    val.insert(val.end(), group->begin(), group->begin() + static_cast<std::ptrdiff_t>(held));
    train.insert(train.end(), group->begin() + static_cast<std::ptrdiff_t>(held), group->end());
  }
  return {std::move(train), std::move(val)};
}

/// Stage 1 on the distant corpus (its own 90/10 split). Throws when the
/// split leaves either side empty.
inline Checkpoint fit_distant_stage(const Posts& distant, const TrainConfig& config, const EncoderAdapter& adapter,
                                    const FeatureExtractor* features = nullptr) {
  for (const auto& p : distant)
    if (p.provenance != Provenance::distant) throw UsageError("distant stage given non-distant post '" + p.id + "'");
  auto [train, val] = split_distant(distant, config.seed);
  if (train.empty() || val.empty()) throw UsageError("distant corpus too small for a 90/10 split");
  return fit_from(make_classifier(adapter, config, config.seed), train, val, config, features, "distant");
}

/// Stage 2 from a stage-1 checkpoint; the result carries both stage records.
inline Checkpoint fit_gold_stage(const Checkpoint& stage1, const Posts& train, const Posts& val,
                                 const TrainConfig& config, const FeatureExtractor* features = nullptr) {
  Checkpoint out = fit_from(stage1.model, train, val, config, features, "gold");
  out.stages.insert(out.stages.begin(), stage1.stages.begin(), stage1.stages.end());
  return out;
}

inline Checkpoint fit_two_stage(const Posts& distant, const Posts& train, const Posts& val, const TrainConfig& config,
                                const EncoderAdapter& adapter, const FeatureExtractor* features = nullptr) {
  if (distant.empty()) {
    log::warn("distant corpus is empty; training on gold data only");
    return fit(train, val, config, adapter, features);
  }
  return fit_gold_stage(fit_distant_stage(distant, config, adapter, features), train, val, config, features);
}

// ---------------------------------------------------------------------------

struct Prediction {
  Real probability = 0.5;
  Label label = Label::complaint;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

template <typename PostRange>
std::vector<Prediction> predict(const Classifier& model, const PostRange& posts, const FeatureExtractor* features,
                                std::size_t max_len = kMaxSequenceLength) {
  std::vector<Prediction> out;
  for (const auto& ex : make_examples(posts, model, max_len, features)) {
    const Real p = predict_probability(model, ex);
    out.push_back({p, decide(p)});
  }
  return out;
}

template <typename PostRange>
std::vector<Prediction> predict(const Checkpoint& ckpt, const PostRange& posts, const FeatureExtractor* features) {
  return predict(ckpt.model, posts, features, ckpt.config.max_len);
}

// ---------------------------------------------------------------------------

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& adapter = ckpt.model.adapter;
  nlohmann::json meta;
  meta["adapter"] = adapter_name(adapter.name);
  if (adapter.name == AdapterName::toy) {
    const auto& t = adapter.toy;
    meta["toy"] = {{"vocab_size", t.vocab_size}, {"hidden", t.hidden}, {"layers", t.layers},
                   {"heads", t.heads}, {"intermediate", t.intermediate}, {"dropout", t.dropout}};
  } else {
    for (const char* file : {"config.json", "tokenizer.json"})
      if (fs::absolute(adapter.source / file) != fs::absolute(dir / file))
        fs::copy_file(adapter.source / file, dir / file, fs::copy_options::overwrite_existing);
  }
  meta["fusion"] = {{"mode", to_string(ckpt.model.fusion_mode)}, {"injection", to_string(ckpt.model.injection)}};
  if (ckpt.model.fusion) {
    meta["fusion"]["feature_size"] = ckpt.model.fusion->projection.h();
    meta["fusion"]["beta"] = ckpt.model.fusion->gate.beta;
  }
  meta["config"] = ckpt.config;
  meta["stages"] = ckpt.stages;
  meta["final_val_loss"] = ckpt.final_val_loss();
  std::ofstream(dir / "metadata.json") << meta.dump(2) << '\n';
  Classifier& model = const_cast<Classifier&>(ckpt.model);
  safetensors::save(dir / "params.safetensors", safetensors::collect(model));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto meta = detail::read_json_file(dir / "metadata.json");
  Checkpoint ckpt;
  try {
    merge_json(ckpt.config, meta.at("config"), "config");
    auto name = parse_adapter_name(meta.at("adapter").get<std::string>());
    if (!name) throw IoError(dir.string() + ": unknown adapter in checkpoint metadata");
    EncoderAdapter adapter;
    if (*name == AdapterName::toy) {
      const auto& t = meta.at("toy");
      ToyConfig toy;
      toy.vocab_size = t.at("vocab_size").get<std::size_t>();
      toy.hidden = t.at("hidden").get<std::size_t>();
      toy.layers = t.at("layers").get<std::size_t>();
      toy.heads = t.at("heads").get<std::size_t>();
      toy.intermediate = t.at("intermediate").get<std::size_t>();
      toy.dropout = t.at("dropout").get<Real>();
      adapter = make_toy_adapter(0, toy);
    } else {
      adapter = build_adapter(*name, dir, 0);
    }
    TrainConfig arch = ckpt.config;
    if (meta.at("fusion").contains("feature_size")) arch.feature_size = meta.at("fusion").at("feature_size");
    ckpt.model = make_classifier(std::move(adapter), arch, 0);
    ckpt.stages = meta.at("stages").get<std::vector<StageRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir.string() + ": malformed checkpoint metadata: " + e.what());
  }
  safetensors::restore(ckpt.model, safetensors::load(dir / "params.safetensors"));
  return ckpt;
}

}  // namespace complaints
