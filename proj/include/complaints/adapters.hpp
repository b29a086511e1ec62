#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "complaints/encoder.hpp"
#include "complaints/error.hpp"
#include "complaints/log.hpp"
#include "complaints/safetensors.hpp"
#include "complaints/tokenizers.hpp"
#include "complaints/xlnet.hpp"

namespace complaints {

enum class AdapterName { bert_base_uncased, albert_base, roberta_base, xlnet_base_cased, toy };

inline constexpr std::array<std::string_view, 5> kAdapterNames = {
    "bert_base_uncased", "albert_base", "roberta_base", "xlnet_base_cased", "toy"};

inline std::string_view adapter_name(AdapterName a) { return kAdapterNames[static_cast<std::size_t>(a)]; }

inline std::optional<AdapterName> parse_adapter_name(std::string_view s) {
  for (std::size_t i = 0; i < kAdapterNames.size(); ++i)
    if (kAdapterNames[i] == s) return static_cast<AdapterName>(i);
  return std::nullopt;
}

inline constexpr const char* kWeightsEnv = "COMPLAINTS_WEIGHTS_DIR";

/// The cache directory from the environment when set, otherwise `fallback`.
inline std::filesystem::path weights_cache(const std::filesystem::path& fallback = {}) {
  if (const char* env = std::getenv(kWeightsEnv); env && *env) return env;
  return fallback;
}

struct ToyConfig {
  std::size_t vocab_size = 2048;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t intermediate = 64;
  Real dropout = 0.1;
};

/// A tokenizer paired with an encoder. Copies share the tokenizer and deep
/// copy the encoder.
struct EncoderAdapter {
  AdapterName name = AdapterName::toy;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::unique_ptr<Encoder> encoder;
  std::filesystem::path source;  // config.json + tokenizer.json, empty for toy
  ToyConfig toy;

  EncoderAdapter() = default;
  EncoderAdapter(AdapterName n, std::shared_ptr<const Tokenizer> t, std::unique_ptr<Encoder> e)
      : name(n), tokenizer(std::move(t)), encoder(std::move(e)) {}
  EncoderAdapter(const EncoderAdapter& o)
      : name(o.name), tokenizer(o.tokenizer), encoder(o.encoder ? o.encoder->clone() : nullptr),
        source(o.source), toy(o.toy) {}
  EncoderAdapter& operator=(const EncoderAdapter& o) {
    if (this != &o) *this = EncoderAdapter(o);
    return *this;
  }
  EncoderAdapter(EncoderAdapter&&) noexcept = default;
  EncoderAdapter& operator=(EncoderAdapter&&) noexcept = default;

  std::size_t d_model() const { return encoder->d_model(); }
};

/// Fixed-width token matrix; `sequence(i)` recovers the unpadded row.
struct EncodedBatch {
  std::vector<std::vector<int>> ids;
  std::vector<std::vector<int>> type_ids;
  std::vector<std::vector<int>> mask;
  std::size_t max_len = 0;

  std::size_t size() const { return ids.size(); }

  TokenSequence sequence(std::size_t i) const {
    TokenSequence s;
    for (std::size_t j = 0; j < max_len && mask[i][j]; ++j) {
      s.ids.push_back(ids[i][j]);
      s.type_ids.push_back(type_ids[i][j]);
    }
    return s;
  }
};

inline constexpr std::size_t kMaxSequenceLength = 49;

template <typename PostRange>
EncodedBatch encode_batch(const PostRange& posts, const EncoderAdapter& adapter,
                          std::size_t max_len = kMaxSequenceLength) {
  EncodedBatch batch;
  batch.max_len = max_len;
  for (const auto& post : posts) {
    TokenSequence seq = adapter.tokenizer->encode(post.text, max_len);
    std::vector<int> mask(max_len, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(seq.size()), 1);
    seq.ids.resize(max_len, adapter.tokenizer->pad_id());
    seq.type_ids.resize(max_len, 0);
    batch.ids.push_back(std::move(seq.ids));
    batch.type_ids.push_back(std::move(seq.type_ids));
    batch.mask.push_back(std::move(mask));
  }
  return batch;
}

// ---------------------------------------------------------------------------


inline EncoderAdapter make_toy_adapter(std::uint64_t seed, const ToyConfig& toy = {}) {
  if (toy.layers > 2 || toy.hidden > 64) throw ConfigError("toy encoder is limited to 2 layers and width 64");
  BertConfig c;
  c.vocab_size = toy.vocab_size;
  c.hidden = toy.hidden;
  c.layers = toy.layers;
  c.heads = toy.heads;
  c.intermediate = toy.intermediate;
  c.max_positions = 64;
  c.hidden_dropout = toy.dropout;
  c.attention_dropout = toy.dropout;
  auto encoder = std::make_unique<BertEncoder>(c);
  std::mt19937_64 rng(seed);
  encoder->initialize(rng);
  EncoderAdapter adapter{AdapterName::toy, std::make_shared<HashTokenizer>(toy.vocab_size), std::move(encoder)};
  adapter.toy = toy;
  return adapter;
}

namespace detail {

inline nn::Activation parse_activation(const std::string& s) {
  if (s == "gelu") return nn::Activation::gelu;
  if (s == "gelu_new" || s == "gelu_pytorch_tanh" || s == "gelu_fast") return nn::Activation::gelu_tanh;
  if (s == "relu") return nn::Activation::relu;
  throw ConfigError("unsupported activation '" + s + "'");
}

inline std::string rename_albert(std::string name) {
  static const std::vector<std::pair<std::string, std::string>> parts = {
      {"attention.self.", "attention."},
      {"attention.output.dense", "attention.dense"},
      {"attention.output.LayerNorm", "attention.LayerNorm"},
      {"intermediate.dense", "ffn"},
      {"output.dense", "ffn_output"},
      {"output.LayerNorm", "full_layer_layer_norm"},
  };
  const std::string layer = "encoder.layer.0.";
  if (name.rfind(layer, 0) == 0) {
    name = "encoder.albert_layer_groups.0.albert_layers.0." + name.substr(layer.size());
    for (const auto& [from, to] : parts)
      if (auto at = name.find(from); at != std::string::npos) {
        name.replace(at, from.size(), to);
        break;
      }
  }
  if (name.rfind("pooler.dense.", 0) == 0) name = "pooler." + name.substr(13);
  return name;
}

/// Source-tensor lookup for pre-trained checkpoints: tries the bare and
/// model-prefixed names and the older gamma/beta spelling of LayerNorm.
inline const safetensors::Tensor* find_source(const safetensors::TensorMap& tensors, const std::string& name,
                                              const std::string& prefix, std::string* found) {
  std::vector<std::string> names = {name};
  for (auto [from, to] : {std::pair{"LayerNorm.weight", "LayerNorm.gamma"}, std::pair{"LayerNorm.bias", "LayerNorm.beta"}})
    if (name.size() >= std::string(from).size() &&
        name.compare(name.size() - std::string(from).size(), std::string::npos, from) == 0)
      names.push_back(name.substr(0, name.size() - std::string(from).size()) + to);
  for (const auto& n : names)
    for (const auto& p : {std::string(), prefix})
      if (auto it = tensors.find(p + n); it != tensors.end()) {
        *found = it->first;
        return &it->second;
      }
  return nullptr;
}

/// Copies pre-trained tensors into `encoder`. Linear weights are stored
/// [out, in] upstream and transposed here. Parameters for which `optional`
/// is true keep their initialization when absent.
inline void load_pretrained(Encoder& encoder, const safetensors::TensorMap& tensors, const std::string& prefix,
                            const std::function<std::string(const std::string&)>& rename,
                            const std::function<bool(const std::string&)>& optional) {
  encoder.visit([&](TensorRef t) {
    const std::string source = rename ? rename(t.name) : t.name;
    std::string found;
    const auto* src = find_source(tensors, source, prefix, &found);
    if (!src) {
      if (optional(t.name)) {
        log::info("pre-trained checkpoint has no '{}', keeping fresh initialization", source);
        return;
      }
      throw IoError("pre-trained checkpoint is missing '" + source + "'");
    }
    const bool is_weight = t.name.size() > 7 && t.name.compare(t.name.size() - 7, 7, ".weight") == 0;
    const bool table = t.name.find("embeddings.") != std::string::npos || t.name.rfind("word_embedding.", 0) == 0;
    const bool transpose = t.cols > 1 && is_weight && !table;
    safetensors::assign(t, *src, transpose, found);
  });
}

inline std::shared_ptr<const Tokenizer> load_tokenizer(AdapterName name, const std::filesystem::path& dir) {
  const auto doc = read_json_file(dir / "tokenizer.json");
  switch (name) {
    case AdapterName::bert_base_uncased:
      return std::make_shared<WordPieceTokenizer>(WordPieceTokenizer::from_json(doc));
    case AdapterName::roberta_base:
      return std::make_shared<ByteBpeTokenizer>(ByteBpeTokenizer::from_json(doc));
    case AdapterName::albert_base:
      return std::make_shared<UnigramTokenizer>(
          UnigramTokenizer::from_json(doc, true, UnigramTokenizer::Layout::albert));
    case AdapterName::xlnet_base_cased:
      return std::make_shared<UnigramTokenizer>(
          UnigramTokenizer::from_json(doc, false, UnigramTokenizer::Layout::xlnet));
    case AdapterName::toy: break;
  }
  throw UsageError("toy adapter has no tokenizer files");
}

inline BertConfig bert_config(const nlohmann::json& j, AdapterName name) {
  BertConfig c;
  c.vocab_size = j.at("vocab_size");
  c.hidden = j.at("hidden_size");
  c.layers = j.at("num_hidden_layers");
  c.heads = j.at("num_attention_heads");
  c.intermediate = j.at("intermediate_size");
  c.max_positions = j.at("max_position_embeddings");
  c.type_vocab = j.value("type_vocab_size", std::size_t{2});
  c.activation = parse_activation(j.value("hidden_act", std::string("gelu")));
  c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
  c.hidden_dropout = j.value("hidden_dropout_prob", 0.1);
  c.attention_dropout = j.value("attention_probs_dropout_prob", 0.1);
  c.initializer_range = j.value("initializer_range", 0.02);
  if (name == AdapterName::roberta_base) c.position_offset = j.value("pad_token_id", std::size_t{1}) + 1;
  if (name == AdapterName::albert_base) {
    c.embedding_size = j.at("embedding_size");
    c.share_layers = true;
    if (j.value("num_hidden_groups", 1) != 1 || j.value("inner_group_num", 1) != 1)
      throw ConfigError("only single-group ALBERT checkpoints are supported");
  }
  return c;
}

inline XlnetConfig xlnet_config(const nlohmann::json& j) {
  XlnetConfig c;
  c.vocab_size = j.at("vocab_size");
  c.hidden = j.at("d_model");
  c.layers = j.at("n_layer");
  c.heads = j.at("n_head");
  c.intermediate = j.at("d_inner");
  c.activation = parse_activation(j.value("ff_activation", std::string("gelu")));
  c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
  c.dropout = j.value("dropout", 0.1);
  c.summary_dropout = j.value("summary_last_dropout", 0.1);
  c.initializer_range = j.value("initializer_range", 0.02);
  if (j.value("attn_type", std::string("bi")) != "bi") throw ConfigError("only bidirectional XLNet attention is supported");
  return c;
}

}  // namespace detail

/// Architecture and tokenizer from `dir` (config.json, tokenizer.json) with
/// freshly initialized parameters.
inline EncoderAdapter build_adapter(AdapterName name, const std::filesystem::path& dir, std::uint64_t seed) {
  if (name == AdapterName::toy) throw UsageError("toy adapter is built with make_toy_adapter");
  const auto config = detail::read_json_file(dir / "config.json");
  std::mt19937_64 rng(seed);
  std::unique_ptr<Encoder> encoder;
  if (name == AdapterName::xlnet_base_cased) {
    auto x = std::make_unique<XlnetEncoder>(detail::xlnet_config(config));
    x->initialize(rng);
    encoder = std::move(x);
  } else {
    auto b = std::make_unique<BertEncoder>(detail::bert_config(config, name));
    b->initialize(rng);
    encoder = std::move(b);
  }
  EncoderAdapter adapter{name, detail::load_tokenizer(name, dir), std::move(encoder)};
  adapter.source = dir;
  return adapter;
}

/// Builds a pre-trained adapter from `cache_dir/<name>/` holding config.json,
/// model.safetensors and tokenizer.json. Heads absent from the checkpoint
/// (pooler, sequence summary) are initialized from `seed`.
inline EncoderAdapter load_adapter(AdapterName name, const std::filesystem::path& cache_dir, std::uint64_t seed) {
  if (name == AdapterName::toy) return make_toy_adapter(seed);
  const auto dir = cache_dir / std::string(adapter_name(name));
  if (!std::filesystem::is_directory(dir))
    throw IoError("no pre-trained weights for " + std::string(adapter_name(name)) + " under " + cache_dir.string() +
                  " (set " + kWeightsEnv + " or fetch the checkpoint into <cache>/" + std::string(adapter_name(name)) + ")");
  auto adapter = build_adapter(name, dir, seed);
  const auto tensors = safetensors::load(dir / "model.safetensors");
  if (name == AdapterName::xlnet_base_cased) {
    detail::load_pretrained(*adapter.encoder, tensors, "transformer.", nullptr,
                            [](const std::string& n) { return n.rfind("sequence_summary.", 0) == 0; });
  } else {
    const std::string prefix = name == AdapterName::bert_base_uncased ? "bert."
                               : name == AdapterName::roberta_base   ? "roberta."
                                                                     : "albert.";
    std::function<std::string(const std::string&)> rename;
    if (name == AdapterName::albert_base) rename = detail::rename_albert;
    detail::load_pretrained(*adapter.encoder, tensors, prefix, rename,
                            [](const std::string& n) { return n.rfind("pooler.", 0) == 0; });
  }
  return adapter;
}

}  // namespace complaints
