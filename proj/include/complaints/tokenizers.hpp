#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "complaints/encoder.hpp"
#include "complaints/error.hpp"
#include "complaints/seeding.hpp"
#include "complaints/text.hpp"
#include "complaints/unicode.hpp"

namespace complaints {

/// Special tokens wrapped around the content ids, with their type ids.
struct SpecialLayout {
  std::vector<int> prefix, suffix;
  std::vector<int> prefix_types, suffix_types;
  int content_type = 0;

  std::size_t size() const { return prefix.size() + suffix.size(); }
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  /// Content token ids without special tokens.
  virtual std::vector<int> tokenize(std::string_view text) const = 0;

  const SpecialLayout& layout() const { return layout_; }
  int pad_id() const { return pad_id_; }

  /// Adds special tokens; content is truncated so the result has at most
  /// `max_len` ids, keeping the prefix.
  TokenSequence encode(std::string_view text, std::size_t max_len) const {
    return wrap(tokenize(text), max_len);
  }

  TokenSequence wrap(std::vector<int> content, std::size_t max_len) const {
    if (max_len <= layout_.size())
      throw UsageError("max_len " + std::to_string(max_len) + " leaves no room for content tokens");
    if (content.size() > max_len - layout_.size()) content.resize(max_len - layout_.size());
    TokenSequence seq;
    seq.ids = layout_.prefix;
    seq.type_ids = layout_.prefix_types;
    seq.ids.insert(seq.ids.end(), content.begin(), content.end());
    seq.type_ids.insert(seq.type_ids.end(), content.size(), layout_.content_type);
    seq.ids.insert(seq.ids.end(), layout_.suffix.begin(), layout_.suffix.end());
    seq.type_ids.insert(seq.type_ids.end(), layout_.suffix_types.begin(), layout_.suffix_types.end());
    return seq;
  }

  /// Untruncated length including special tokens.
  std::size_t full_length(std::string_view text) const { return tokenize(text).size() + layout_.size(); }

 protected:
  SpecialLayout layout_;
  int pad_id_ = 0;
};

// ---------------------------------------------------------------------------

/// Hashes basic_tokenize output into a fixed vocabulary; ids 0..3 are
/// [PAD], [UNK], [CLS], [SEP].
class HashTokenizer final : public Tokenizer {
 public:
  static constexpr int kFirstBucket = 4;

  explicit HashTokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size <= static_cast<std::size_t>(kFirstBucket))
      throw ConfigError("hash tokenizer needs more than 4 vocabulary entries");
    layout_.prefix = {2};
    layout_.prefix_types = {0};
    layout_.suffix = {3};
    layout_.suffix_types = {0};
  }

  std::vector<int> tokenize(std::string_view text) const override {
    std::vector<int> ids;
    const auto buckets = static_cast<std::uint64_t>(vocab_size_) - kFirstBucket;
    for (const auto& token : basic_tokenize(text))
      ids.push_back(kFirstBucket + static_cast<int>(fnv1a(token) % buckets));
    return ids;
  }

 private:
  std::size_t vocab_size_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline int vocab_id(const std::unordered_map<std::string, int>& vocab, const std::string& token) {
  auto it = vocab.find(token);
  if (it == vocab.end()) throw ConfigError("tokenizer vocabulary has no '" + token + "'");
  return it->second;
}

inline bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0x20000 && c <= 0x2A6DF) || (c >= 0x2A700 && c <= 0x2B73F) ||
         (c >= 0x2B740 && c <= 0x2B81F) || (c >= 0x2B820 && c <= 0x2CEAF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

}  // namespace detail

/// BERT uncased pipeline: clean, pad CJK, strip accents, lowercase, split on
/// whitespace and punctuation, then greedy longest-match WordPiece.
class WordPieceTokenizer final : public Tokenizer {
 public:
  WordPieceTokenizer(std::unordered_map<std::string, int> vocab, std::string unk = "[UNK]",
                     std::size_t max_chars = 100)
      : vocab_(std::move(vocab)), max_chars_(max_chars) {
    unk_id_ = detail::vocab_id(vocab_, unk);
    pad_id_ = detail::vocab_id(vocab_, "[PAD]");
    layout_.prefix = {detail::vocab_id(vocab_, "[CLS]")};
    layout_.prefix_types = {0};
    layout_.suffix = {detail::vocab_id(vocab_, "[SEP]")};
    layout_.suffix_types = {0};
  }

  static WordPieceTokenizer from_json(const nlohmann::json& doc) {
    const auto& model = doc.at("model");
    if (model.value("type", "") != "WordPiece") throw ConfigError("tokenizer.json model is not WordPiece");
    return WordPieceTokenizer(model.at("vocab").get<std::unordered_map<std::string, int>>(),
                              model.value("unk_token", "[UNK]"),
                              model.value("max_input_chars_per_word", std::size_t{100}));
  }

  static std::string normalize(std::string_view text) {
    unicode::CodePoints cleaned;
    for (char32_t c : unicode::decode(text)) {
      if (c == 0 || c == 0xFFFD) continue;
      const bool ws = c == U'\t' || c == U'\n' || c == U'\r' || unicode::is_whitespace(c);
      if (!ws && unicode::is_control(c)) continue;
      if (ws) {
        cleaned.push_back(U' ');
      } else if (detail::is_cjk(c)) {
        cleaned.insert(cleaned.end(), {U' ', c, U' '});
      } else {
        cleaned.push_back(c);
      }
    }
    unicode::CodePoints lowered;
    for (char32_t c : unicode::decode(unicode::strip_accents(unicode::encode(cleaned))))
      lowered.push_back(unicode::to_lower(c));
    return unicode::encode(lowered);
  }

  static std::vector<std::string> pre_tokenize(std::string_view normalized) {
    std::vector<std::string> words;
    unicode::CodePoints current;
    auto flush = [&] {
      if (!current.empty()) words.push_back(unicode::encode(current));
      current.clear();
    };
    for (char32_t c : unicode::decode(normalized)) {
      if (unicode::is_whitespace(c)) {
        flush();
      } else if ((c < 0x80 && std::ispunct(static_cast<int>(c))) || unicode::is_punctuation(c)) {
        flush();
        words.push_back(unicode::encode({c}));
      } else {
        current.push_back(c);
      }
    }
    flush();
    return words;
  }

  std::vector<int> tokenize(std::string_view text) const override {
    std::vector<int> ids;
    for (const auto& word : pre_tokenize(normalize(text))) word_pieces(word, ids);
    return ids;
  }

 private:
  void word_pieces(const std::string& word, std::vector<int>& ids) const {
    const auto cps = unicode::decode(word);
    if (cps.size() > max_chars_) {
      ids.push_back(unk_id_);
      return;
    }
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < cps.size()) {
      std::size_t end = cps.size();
      int found = -1;
      while (start < end) {
        std::string piece = unicode::encode(unicode::CodePoints(cps.begin() + static_cast<std::ptrdiff_t>(start),
                                                                cps.begin() + static_cast<std::ptrdiff_t>(end)));
        if (start > 0) piece = "##" + piece;
        if (auto it = vocab_.find(piece); it != vocab_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) {
        ids.push_back(unk_id_);
        return;
      }
      pieces.push_back(found);
      start = end;
    }
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }

  std::unordered_map<std::string, int> vocab_;
  std::size_t max_chars_;
  int unk_id_ = 0;
};

// ---------------------------------------------------------------------------

/// GPT-2 style byte-level BPE as used by RoBERTa.
class ByteBpeTokenizer final : public Tokenizer {
 public:
  ByteBpeTokenizer(std::unordered_map<std::string, int> vocab,
                   const std::vector<std::pair<std::string, std::string>>& merges)
      : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < merges.size(); ++i)
      ranks_.emplace(merges[i].first + ' ' + merges[i].second, i);
    pad_id_ = detail::vocab_id(vocab_, "<pad>");
    if (auto it = vocab_.find("<unk>"); it != vocab_.end()) unk_id_ = it->second;
    layout_.prefix = {detail::vocab_id(vocab_, "<s>")};
    layout_.prefix_types = {0};
    layout_.suffix = {detail::vocab_id(vocab_, "</s>")};
    layout_.suffix_types = {0};
    const auto table = byte_table();
    for (int b = 0; b < 256; ++b) byte_symbols_[static_cast<std::size_t>(b)] = unicode::encode({table[static_cast<std::size_t>(b)]});
  }

  static ByteBpeTokenizer from_json(const nlohmann::json& doc) {
    const auto& model = doc.at("model");
    if (model.value("type", "") != "BPE") throw ConfigError("tokenizer.json model is not BPE");
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : model.at("merges")) {
      if (m.is_array()) {
        merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
      } else {
        const auto s = m.get<std::string>();
        const auto space = s.find(' ');
        if (space == std::string::npos) throw ConfigError("malformed BPE merge '" + s + "'");
        merges.emplace_back(s.substr(0, space), s.substr(space + 1));
      }
    }
    return ByteBpeTokenizer(model.at("vocab").get<std::unordered_map<std::string, int>>(), merges);
  }

  /// Byte to printable code point map shared with GPT-2.
  static std::array<char32_t, 256> byte_table() {
    std::array<char32_t, 256> table{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
    char32_t next = 256;
    for (std::size_t b = 0; b < 256; ++b) table[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return table;
  }

  /// Splits like the GPT-2 pattern
  /// 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
  static std::vector<std::string> pre_tokenize(std::string_view text) {
    const auto cps = unicode::decode(text);
    const std::size_t n = cps.size();
    std::vector<std::string> out;
    auto ws = [&](std::size_t i) { return unicode::is_whitespace(cps[i]); };
    auto letter = [&](std::size_t i) { return unicode::is_letter(cps[i]); };
    auto number = [&](std::size_t i) { return unicode::is_number(cps[i]); };
    auto other = [&](std::size_t i) { return !ws(i) && !letter(i) && !number(i); };
    std::size_t i = 0;
    while (i < n) {
      std::size_t end = i;
      if (cps[i] == U'\'' && i + 1 < n) {
        const char32_t a = cps[i + 1];
        const char32_t b = i + 2 < n ? cps[i + 2] : 0;
        if (a == U's' || a == U't' || a == U'm' || a == U'd') end = i + 2;
        else if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l'))
          end = i + 3;
      }
      if (end == i) {
        const std::size_t body = (cps[i] == U' ' && i + 1 < n) ? i + 1 : i;
        for (auto cls : {+[](char32_t c) { return unicode::is_letter(c); },
                         +[](char32_t c) { return unicode::is_number(c); }}) {
          if (end != i) break;
          if (cls(cps[body])) {
            end = body;
            while (end < n && cls(cps[end])) ++end;
          }
        }
        if (end == i && other(body)) {
          end = body;
          while (end < n && other(end)) ++end;
        }
      }
      if (end == i) {
        std::size_t run = i;
        while (run < n && ws(run)) ++run;
        if (run == n || run - i == 1) end = run;
        else end = run - 1;
      }
      out.push_back(unicode::encode(unicode::CodePoints(cps.begin() + static_cast<std::ptrdiff_t>(i),
                                                        cps.begin() + static_cast<std::ptrdiff_t>(end))));
      i = end;
    }
    return out;
  }

  std::vector<int> tokenize(std::string_view text) const override {
    std::vector<int> ids;
    for (const auto& word : pre_tokenize(text)) {
      std::vector<std::string> symbols;
      for (unsigned char b : word) symbols.push_back(byte_symbols_[b]);
      merge(symbols);
      for (const auto& s : symbols) {
        if (auto it = vocab_.find(s); it != vocab_.end()) ids.push_back(it->second);
        else if (unk_id_ >= 0) ids.push_back(unk_id_);
      }
    }
    return ids;
  }

 private:
  void merge(std::vector<std::string>& symbols) const {
    while (symbols.size() > 1) {
      std::size_t best = std::numeric_limits<std::size_t>::max(), at = 0;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = ranks_.find(symbols[i] + ' ' + symbols[i + 1]);
        if (it != ranks_.end() && it->second < best) {
          best = it->second;
          at = i;
        }
      }
      if (best == std::numeric_limits<std::size_t>::max()) return;
      const std::string left = symbols[at], right = symbols[at + 1];
      std::vector<std::string> merged;
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          merged.push_back(left + right);
          ++i;
        } else {
          merged.push_back(symbols[i]);
        }
      }
      symbols = std::move(merged);
    }
  }

  std::unordered_map<std::string, int> vocab_;
  std::unordered_map<std::string, std::size_t> ranks_;
  std::array<std::string, 256> byte_symbols_;
  int unk_id_ = -1;
};

// ---------------------------------------------------------------------------

/// SentencePiece unigram model (ALBERT, XLNet): quote rewriting, NFKD,
/// accent stripping, optional lowercasing, metaspace splitting and Viterbi
/// segmentation.
class UnigramTokenizer final : public Tokenizer {
 public:
  enum class Layout { albert, xlnet };

  static constexpr std::string_view kSpace = "\xE2\x96\x81";  // U+2581
  static constexpr double kUnkPenalty = 10.0;

  UnigramTokenizer(std::vector<std::pair<std::string, double>> pieces, int unk_id, bool lowercase,
                   Layout layout)
      : lowercase_(lowercase) {
    if (pieces.empty()) throw ConfigError("unigram vocabulary is empty");
    if (unk_id < 0 || static_cast<std::size_t>(unk_id) >= pieces.size())
      throw ConfigError("unigram unk_id out of range");
    unk_id_ = unk_id;
    double min_score = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      pieces_.emplace(pieces[i].first, Piece{static_cast<int>(i), pieces[i].second});
      index_.emplace(pieces[i].first, static_cast<int>(i));
      min_score = std::min(min_score, pieces[i].second);
      max_piece_chars_ = std::max(max_piece_chars_, unicode::decode(pieces[i].first).size());
    }
    unk_score_ = min_score - kUnkPenalty;
    pad_id_ = detail::vocab_id(index_, "<pad>");
    if (layout == Layout::albert) {
      layout_.prefix = {detail::vocab_id(index_, "[CLS]")};
      layout_.prefix_types = {0};
      layout_.suffix = {detail::vocab_id(index_, "[SEP]")};
      layout_.suffix_types = {0};
    } else {
      layout_.suffix = {detail::vocab_id(index_, "<sep>"), detail::vocab_id(index_, "<cls>")};
      layout_.suffix_types = {0, 2};
    }
  }

  static UnigramTokenizer from_json(const nlohmann::json& doc, bool lowercase, Layout layout) {
    const auto& model = doc.at("model");
    if (model.value("type", "") != "Unigram") throw ConfigError("tokenizer.json model is not Unigram");
    std::vector<std::pair<std::string, double>> pieces;
    for (const auto& entry : model.at("vocab"))
      pieces.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<double>());
    return UnigramTokenizer(std::move(pieces), model.value("unk_id", 0), lowercase, layout);
  }

  std::string normalize(std::string_view text) const {
    std::string s(text);
    for (std::string_view quote : {"``", "''"}) {
      std::size_t at = 0;
      while ((at = s.find(quote, at)) != std::string::npos) s.replace(at, 2, "\"");
    }
    s = unicode::strip_accents(unicode::normalize(s, unicode::Form::nfkd));
    unicode::CodePoints out;
    for (char32_t c : unicode::decode(s)) {
      if (lowercase_) c = unicode::to_lower(c);
      if (c == U' ' && !out.empty() && out.back() == U' ') continue;
      out.push_back(c);
    }
    return unicode::encode(out);
  }

  /// Replaces spaces with U+2581, prepends one, and splits before each.
  static std::vector<std::string> pre_tokenize(std::string_view normalized) {
    if (normalized.empty()) return {};
    std::string s;
    for (char c : normalized) {
      if (c == ' ') s += kSpace;
      else s += c;
    }
    if (s.compare(0, kSpace.size(), kSpace) != 0) s.insert(0, kSpace);
    std::vector<std::string> words;
    std::size_t start = 0;
    while (start < s.size()) {
      std::size_t next = s.find(kSpace, start + kSpace.size());
      if (next == std::string::npos) next = s.size();
      words.push_back(s.substr(start, next - start));
      start = next;
    }
    return words;
  }

  std::vector<int> tokenize(std::string_view text) const override {
    std::vector<int> ids;
    for (const auto& word : pre_tokenize(normalize(text))) viterbi(word, ids);
    return ids;
  }

 private:
  struct Piece {
    int id;
    double score;
  };

  void viterbi(const std::string& word, std::vector<int>& ids) const {
    const auto cps = unicode::decode(word);
    const std::size_t n = cps.size();
    std::vector<std::size_t> offsets(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::string tmp;
      unicode::append(tmp, cps[i]);
      offsets[i + 1] = offsets[i] + tmp.size();
    }
    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> best(n + 1, neg_inf);
    std::vector<std::size_t> from(n + 1, 0);
    std::vector<int> token(n + 1, -1);
    best[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (best[i] == neg_inf) continue;
      bool single = false;
      for (std::size_t len = 1; len <= max_piece_chars_ && i + len <= n; ++len) {
        auto it = pieces_.find(word.substr(offsets[i], offsets[i + len] - offsets[i]));
        if (it == pieces_.end()) continue;
        if (len == 1) single = true;
        const double score = best[i] + it->second.score;
        if (score > best[i + len]) {
          best[i + len] = score;
          from[i + len] = i;
          token[i + len] = it->second.id;
        }
      }
      if (!single && best[i] + unk_score_ > best[i + 1]) {
        best[i + 1] = best[i] + unk_score_;
        from[i + 1] = i;
        token[i + 1] = unk_id_;
      }
    }
    std::vector<int> path;
    for (std::size_t at = n; at > 0; at = from[at]) path.push_back(token[at]);
    std::reverse(path.begin(), path.end());
    for (std::size_t k = 0; k < path.size(); ++k)
      if (!(path[k] == unk_id_ && k > 0 && path[k - 1] == unk_id_)) ids.push_back(path[k]);
  }

  std::unordered_map<std::string, Piece> pieces_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_chars_ = 1;
  double unk_score_ = 0.0;
  int unk_id_ = 0;
  bool lowercase_ = false;
};

}  // namespace complaints
