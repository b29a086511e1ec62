#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace complaints {

inline constexpr std::string_view kUrlToken = "<url>";
inline constexpr std::string_view kUserToken = "<user>";

namespace detail {

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char c = s[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[i]) return false;
  }
  return true;
}

inline bool is_ascii_separator(unsigned char c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
         (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E) || c <= 0x20 ||
         c == 0x7F;
}

// Length of the UTF-8 sequence starting at s[i]; invalid lead bytes count as 1.
inline std::size_t utf8_length(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  std::size_t n = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3
                  : (c >> 3) == 0x1E ? 4 : 1;
  if (i + n > s.size()) return 1;
  for (std::size_t k = 1; k < n; ++k)
    if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
  return n;
}

inline std::uint32_t utf8_decode(std::string_view s, std::size_t i,
                                 std::size_t n) {
  const auto b = [&](std::size_t k) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(s[i + k]));
  };
  switch (n) {
    case 2: return ((b(0) & 0x1F) << 6) | (b(1) & 0x3F);
    case 3: return ((b(0) & 0x0F) << 12) | ((b(1) & 0x3F) << 6) | (b(2) & 0x3F);
    case 4:
      return ((b(0) & 0x07) << 18) | ((b(1) & 0x3F) << 12) |
             ((b(2) & 0x3F) << 6) | (b(3) & 0x3F);
    default: return b(0);
  }
}

// Unicode whitespace and punctuation outside ASCII that tweets commonly use
// (NBSP, inverted marks, guillemets, general punctuation, CJK punctuation).
inline bool is_unicode_separator(std::uint32_t cp) {
  return cp == 0xA0 || cp == 0xA1 || cp == 0xAB || cp == 0xBB ||
         cp == 0xBF || cp == 0xB7 || (cp >= 0x2000 && cp <= 0x206F) ||
         (cp >= 0x3000 && cp <= 0x303F) || cp == 0xFEFF;
}

inline bool is_whitespace(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < chunk.size()) {
    // Pre-masked placeholders survive punctuation splitting.
    if (chunk[i] == '<') {
      if (starts_with_ci(chunk.substr(i), kUrlToken)) {
        flush();
        out.emplace_back(kUrlToken);
        i += kUrlToken.size();
        continue;
      }
      if (starts_with_ci(chunk.substr(i), kUserToken)) {
        flush();
        out.emplace_back(kUserToken);
        i += kUserToken.size();
        continue;
      }
    }
    const auto c = static_cast<unsigned char>(chunk[i]);
    if (c < 0x80) {
      if (is_ascii_separator(c)) {
        flush();
      } else {
        current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c + 32)
                                               : static_cast<char>(c));
      }
      ++i;
      continue;
    }
    const std::size_t n = utf8_length(chunk, i);
    if (is_unicode_separator(utf8_decode(chunk, i, n))) {
      flush();
    } else {
      current.append(chunk.substr(i, n));
    }
    i += n;
  }
  flush();
}

}  // namespace detail

/// Lowercasing whitespace/punctuation tokenizer shared by the feature
/// extractors, the bag-of-words baseline and the toy encoder. URLs become
/// "<url>", @-mentions become "<user>". Lowercasing is ASCII-only; other
/// code points pass through unchanged.
inline std::vector<std::string> basic_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_whitespace(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !detail::is_whitespace(text[j])) ++j;
    if (j == i) break;
    std::string_view chunk = text.substr(i, j - i);
    i = j;
    if (detail::starts_with_ci(chunk, "http://") ||
        detail::starts_with_ci(chunk, "https://") ||
        detail::starts_with_ci(chunk, "www.")) {
      tokens.emplace_back(kUrlToken);
    } else if (chunk.size() > 1 && chunk[0] == '@' &&
               !detail::is_ascii_separator(
                   static_cast<unsigned char>(chunk[1]))) {
      tokens.emplace_back(kUserToken);
    } else {
      detail::split_chunk(chunk, tokens);
    }
  }
  return tokens;
}

}  // namespace complaints
