#include "complaints/encoder.hpp"
#include "complaints/xlnet.hpp"

#include <gtest/gtest.h>

#include <random>

namespace complaints {
namespace {

BertConfig tiny_config() {
  BertConfig c;
  c.vocab_size = 20;
  c.hidden = 8;
  c.heads = 2;
  c.layers = 2;
  c.intermediate = 12;
  c.max_positions = 16;
  c.hidden_dropout = 0.0;
  c.attention_dropout = 0.0;
  c.initializer_range = 0.5;
  return c;
}

TokenSequence sequence(std::vector<int> ids) {
  TokenSequence s;
  s.type_ids.assign(ids.size(), 0);
  s.ids = std::move(ids);
  return s;
}

// Checks every parameter tensor and the embedding-output gradient against
// central differences of loss = w . pooled.
void check_gradients(Encoder& enc, const TokenSequence& seq, std::mt19937_64& rng) {
  std::normal_distribution<Real> n(0, 1);
  Vector w(static_cast<Eigen::Index>(enc.d_model()));
  for (auto& x : w) x = n(rng);

  auto grads = enc.zeros_like();
  auto cache = enc.make_cache();
  Matrix e = enc.embed(seq, {}, cache.get());
  enc.encode(e, seq, {}, cache.get());
  Matrix grad_e = enc.encode_backward(w, *cache, *grads);
  enc.embed_backward(grad_e, *cache, *grads);

  auto loss = [&] { return w.dot(enc.forward(seq)); };
  auto params = collect_tensors(enc);
  auto grad_tensors = collect_tensors(*grads);
  ASSERT_EQ(params.size(), grad_tensors.size());
  for (std::size_t t = 0; t < params.size(); ++t) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < params[t].data.size(); ++i) {
      Real& x = params[t].data[i];
      const Real saved = x;
      x = saved + 1e-5;
      const Real up = loss();
      x = saved - 1e-5;
      const Real down = loss();
      x = saved;
      const Real numeric = (up - down) / 2e-5;
      const Real analytic = grad_tensors[t].data[i];
      diff += (numeric - analytic) * (numeric - analytic);
      scale = std::max({scale, numeric * numeric, analytic * analytic});
    }
    EXPECT_LE(std::sqrt(diff) / std::max(std::sqrt(scale), 1e-4), 1e-4) << params[t].name;
  }

  // Embedding-output gradient (the fusion injection point).
  Matrix numeric(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    Matrix up = e, down = e;
    up.data()[i] += 1e-5;
    down.data()[i] -= 1e-5;
    numeric.data()[i] = (w.dot(enc.encode(up, seq, {}, nullptr)) -
                         w.dot(enc.encode(down, seq, {}, nullptr))) / 2e-5;
  }
  EXPECT_LE((numeric - grad_e).norm() / numeric.norm(), 1e-5);
}

void check_gradients(const BertConfig& config, unsigned seed) {
  std::mt19937_64 rng(seed);
  BertEncoder enc(config);
  enc.initialize(rng);
  check_gradients(enc, sequence({1, 5, 7, 3, 2}), rng);
}

TEST(BertEncoder, GradientsMatchFiniteDifferences) { check_gradients(tiny_config(), 1); }

TEST(BertEncoder, FactorizedSharedLayersGradients) {
  auto c = tiny_config();
  c.embedding_size = 4;
  c.share_layers = true;
  c.layers = 3;
  c.activation = nn::Activation::gelu_tanh;
  check_gradients(c, 2);
}

TEST(BertEncoder, NoPoolerAndPositionOffsetGradients) {
  auto c = tiny_config();
  c.pooler = false;
  c.position_offset = 2;
  c.activation = nn::Activation::relu;
  check_gradients(c, 3);
}

TEST(BertEncoder, DeterministicWithoutDropoutAndStochasticWithIt) {
  auto c = tiny_config();
  c.hidden_dropout = 0.3;
  c.attention_dropout = 0.3;
  std::mt19937_64 rng(4);
  BertEncoder enc(c);
  enc.initialize(rng);
  auto seq = sequence({2, 4, 6});
  EXPECT_EQ(enc.forward(seq), enc.forward(seq));
  std::mt19937_64 a(9), b(10);
  ForwardContext ta{true, &a}, tb{true, &b};
  EXPECT_NE(enc.forward(seq, ta), enc.forward(seq, tb));
}

TEST(BertEncoder, RejectsOutOfRangeInputs) {
  BertEncoder enc(tiny_config());
  EXPECT_THROW(enc.forward(sequence({25})), ShapeError);
  EXPECT_THROW(enc.forward(sequence(std::vector<int>(17, 1))), ShapeError);
  auto cfg = tiny_config();
  cfg.heads = 3;
  EXPECT_THROW(BertEncoder{cfg}, ConfigError);
}

TEST(BertEncoder, SharedLayersExposeOneParameterSet) {
  auto c = tiny_config();
  c.share_layers = true;
  c.layers = 4;
  BertEncoder shared(c);
  c.share_layers = false;
  BertEncoder separate(c);
  EXPECT_LT(collect_tensors(shared).size(), collect_tensors(separate).size());
}

XlnetConfig tiny_xlnet() {
  XlnetConfig c;
  c.vocab_size = 20;
  c.hidden = 8;
  c.heads = 2;
  c.layers = 2;
  c.intermediate = 12;
  c.dropout = 0.0;
  c.summary_dropout = 0.0;
  c.initializer_range = 0.5;
  return c;
}

TEST(XlnetEncoder, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  XlnetEncoder enc(tiny_xlnet());
  enc.initialize(rng);
  check_gradients(enc, sequence({4, 9, 1, 3}), rng);
}

TEST(XlnetEncoder, SegmentTermGradients) {
  std::mt19937_64 rng(12);
  XlnetEncoder enc(tiny_xlnet());
  enc.initialize(rng);
  TokenSequence seq{{4, 9, 1, 3, 7}, {0, 0, 0, 0, 2}};
  check_gradients(enc, seq, rng);
}

TEST(XlnetEncoder, RelativePositionsRunFromLengthDown) {
  XlnetEncoder enc(tiny_xlnet());
  Matrix pos = enc.relative_positions(3);
  ASSERT_EQ(pos.rows(), 6);
  // distance 0 sits at row L: sin terms vanish, cos terms are one
  for (Eigen::Index f = 0; f < 4; ++f) {
    EXPECT_DOUBLE_EQ(pos(3, f), 0.0);
    EXPECT_DOUBLE_EQ(pos(3, f + 4), 1.0);
  }
  EXPECT_DOUBLE_EQ(pos(0, 0), std::sin(3.0));
  EXPECT_DOUBLE_EQ(pos(5, 0), std::sin(-2.0));
}

TEST(XlnetEncoder, PoolsFromTheLastToken) {
  std::mt19937_64 rng(13);
  XlnetEncoder enc(tiny_xlnet());
  enc.initialize(rng);
  auto a = enc.forward(sequence({1, 2, 3}));
  auto b = enc.forward(sequence({3, 2, 1}));
  EXPECT_GT((a - b).norm(), 1e-6);
  EXPECT_EQ(a, enc.forward(sequence({1, 2, 3})));
}

}  // namespace
}  // namespace complaints
