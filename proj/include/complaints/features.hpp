#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "complaints/error.hpp"
#include "complaints/linalg.hpp"
#include "complaints/log.hpp"
#include "complaints/text.hpp"

namespace complaints {

inline constexpr std::size_t kEmotionDims = 9;
inline constexpr std::size_t kTopicClusters = 200;

// Ekman's six basic emotions followed by three sentiment dimensions; the
// last three names are this library's convention.
inline constexpr std::array<std::string_view, kEmotionDims> kEmotionNames = {
    "anger",   "disgust",  "fear",     "joy",    "sadness",
    "surprise", "positive", "negative", "neutral"};

inline std::optional<std::size_t> emotion_index(std::string_view name) {
  for (std::size_t i = 0; i < kEmotionDims; ++i)
    if (kEmotionNames[i] == name) return i;
  return std::nullopt;
}

/// Token -> set of emotion dimensions, immutable after construction.
class EmotionLexicon {
 public:
  using Tags = std::bitset<kEmotionDims>;

  EmotionLexicon() = default;

  /// Throws ConfigError when any entry references a dimension >= 9.
  explicit EmotionLexicon(
      const std::map<std::string, std::vector<std::size_t>>& entries) {
    for (const auto& [token, dims] : entries) {
      Tags tags;
      for (std::size_t d : dims) {
        if (d >= kEmotionDims)
          throw ConfigError("emotion lexicon entry '" + token +
                            "' references dimension " + std::to_string(d) +
                            " (must be < 9)");
        tags.set(d);
      }
      tags_[token] |= tags;
    }
  }

  const Tags* find(const std::string& token) const {
    auto it = tags_.find(token);
    return it == tags_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return tags_.size(); }

 private:
  std::unordered_map<std::string, Tags> tags_;
};

/// Reads "token dim_name[,dim_name...]" lines; '#' starts a comment line.
/// Tokens are lowercased through basic_tokenize rules on lookup, so lexicon
/// tokens should be lowercase.
inline EmotionLexicon load_emotion_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open emotion lexicon '" + path.string() + "'");
  std::map<std::string, std::vector<std::size_t>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token, dims;
    if (!(fields >> token) || token[0] == '#') continue;
    if (!(fields >> dims))
      throw ValidationError(line_no, path.string() + ":" +
                                         std::to_string(line_no) +
                                         ": missing dimension list");
    std::istringstream dim_list(dims);
    std::string name;
    while (std::getline(dim_list, name, ',')) {
      auto idx = emotion_index(name);
      if (!idx)
        throw ValidationError(line_no, path.string() + ":" +
                                           std::to_string(line_no) +
                                           ": unknown emotion dimension '" +
                                           name + "'");
      entries[token].push_back(*idx);
    }
  }
  return EmotionLexicon(entries);
}

/// Per-dimension share of tokens carrying that tag, each in [0, 1].
struct EmotionVector {
  Vector values = Vector::Zero(kEmotionDims);
};

inline EmotionVector extract_emotion(std::string_view text,
                                     const EmotionLexicon& lexicon) {
  EmotionVector out;
  const auto tokens = basic_tokenize(text);
  if (tokens.empty()) return out;
  for (const auto& token : tokens) {
    if (const auto* tags = lexicon.find(token)) {
      for (std::size_t d = 0; d < kEmotionDims; ++d)
        if (tags->test(d)) out.values[static_cast<Eigen::Index>(d)] += 1.0;
    }
  }
  out.values /= static_cast<Real>(tokens.size());
  out.values = out.values.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

/// Fixed word-to-cluster assignment over 200 clusters.
class TopicModel {
 public:
  TopicModel() = default;

  void assign(std::string token, std::size_t cluster) {
    if (cluster >= kTopicClusters)
      throw ValidationError(cluster, "topic cluster index " +
                                         std::to_string(cluster) +
                                         " outside [0, 199]");
    clusters_[std::move(token)] = cluster;
  }

  std::optional<std::size_t> cluster_of(const std::string& token) const {
    auto it = clusters_.find(token);
    if (it == clusters_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return clusters_.size(); }
  static constexpr std::size_t cluster_count() { return kTopicClusters; }

  const std::unordered_map<std::string, std::size_t>& entries() const {
    return clusters_;
  }

 private:
  std::unordered_map<std::string, std::size_t> clusters_;
};

/// Loads "token cluster_index" lines. Errors carry the 1-based line number.
inline TopicModel load_topic_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topic cluster file '" + path.string() + "'");
  TopicModel model;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token, index_text;
    if (!(fields >> token) || token[0] == '#') continue;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
    if (!(fields >> index_text))
      throw ValidationError(line_no, where() + ": missing cluster index");
    long long index = -1;
    std::size_t consumed = 0;
    try {
      index = std::stoll(index_text, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != index_text.size())
      throw ValidationError(line_no, where() + ": cluster index '" +
                                         index_text + "' is not an integer");
    if (index < 0 || index >= static_cast<long long>(kTopicClusters))
      throw ValidationError(line_no, where() + ": cluster index " +
                                         index_text + " outside [0, 199]");
    if (model.cluster_of(token))
      log::warn("{}: duplicate token '{}', last entry wins", where(), token);
    model.assign(token, static_cast<std::size_t>(index));
  }
  return model;
}

/// Relative cluster frequencies: sums to 1 when any token is in the
/// vocabulary, zero vector otherwise.
struct TopicVector {
  Vector values = Vector::Zero(kTopicClusters);
};

inline TopicVector extract_topics(std::string_view text,
                                  const TopicModel& model) {
  TopicVector out;
  std::size_t matched = 0;
  for (const auto& token : basic_tokenize(text)) {
    if (auto c = model.cluster_of(token)) {
      out.values[static_cast<Eigen::Index>(*c)] += 1.0;
      ++matched;
    }
  }
  if (matched > 0) out.values /= static_cast<Real>(matched);
  return out;
}

enum class FeatureMode { emotion, topics, emotion_topics };

inline std::size_t raw_dimension(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::emotion: return kEmotionDims;
    case FeatureMode::topics: return kTopicClusters;
    case FeatureMode::emotion_topics: return kEmotionDims + kTopicClusters;
  }
  return 0;
}

inline std::string_view to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::emotion: return "emotion";
    case FeatureMode::topics: return "topics";
    case FeatureMode::emotion_topics: return "emotion_topics";
  }
  return "";
}

inline std::optional<FeatureMode> parse_feature_mode(std::string_view s) {
  if (s == "emotion") return FeatureMode::emotion;
  if (s == "topics") return FeatureMode::topics;
  if (s == "emotion_topics") return FeatureMode::emotion_topics;
  return std::nullopt;
}

struct FeatureBundle {
  EmotionVector emotion;
  TopicVector topics;
  FeatureMode mode = FeatureMode::emotion_topics;

  /// Concatenation selected by the mode: emotion (9), topics (200) or
  /// emotion followed by topics (209).
  Vector raw() const {
    switch (mode) {
      case FeatureMode::emotion: return emotion.values;
      case FeatureMode::topics: return topics.values;
      case FeatureMode::emotion_topics: {
        Vector v(kEmotionDims + kTopicClusters);
        v << emotion.values, topics.values;
        return v;
      }
    }
    return {};
  }
};

inline FeatureBundle bundle(EmotionVector emotion, TopicVector topics,
                            FeatureMode mode) {
  return FeatureBundle{std::move(emotion), std::move(topics), mode};
}

/// Both extractors behind one call; either resource may be absent when the
/// mode does not need it.
class FeatureExtractor {
 public:
  FeatureExtractor(FeatureMode mode, const EmotionLexicon* lexicon,
                   const TopicModel* topics)
      : mode_(mode), lexicon_(lexicon), topics_(topics) {
    const bool needs_emotion = mode != FeatureMode::topics;
    const bool needs_topics = mode != FeatureMode::emotion;
    if (needs_emotion && lexicon_ == nullptr)
      throw ConfigError("feature mode '" + std::string(to_string(mode)) +
                        "' needs an emotion lexicon");
    if (needs_topics && topics_ == nullptr)
      throw ConfigError("feature mode '" + std::string(to_string(mode)) +
                        "' needs a topic cluster file");
  }

  FeatureBundle operator()(std::string_view text) const {
    FeatureBundle b;
    b.mode = mode_;
    if (lexicon_ && mode_ != FeatureMode::topics)
      b.emotion = extract_emotion(text, *lexicon_);
    if (topics_ && mode_ != FeatureMode::emotion)
      b.topics = extract_topics(text, *topics_);
    return b;
  }

  FeatureMode mode() const { return mode_; }

 private:
  FeatureMode mode_;
  const EmotionLexicon* lexicon_;
  const TopicModel* topics_;
};

}  // namespace complaints
