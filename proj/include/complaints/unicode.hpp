#pragma once

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "complaints/error.hpp"

// Thin helpers over ICU for the tokenizers: code point iteration,
// character classes and normalization.

namespace complaints::unicode {

using CodePoints = std::vector<char32_t>;

/// Decodes UTF-8; malformed bytes become U+FFFD.
inline CodePoints decode(std::string_view s) {
  CodePoints out;
  out.reserve(s.size());
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto length = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    out.push_back(c < 0 ? U'�' : static_cast<char32_t>(c));
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  std::uint8_t buf[4];
  std::int32_t n = 0;
  UBool error = false;
  U8_APPEND(buf, n, 4, static_cast<UChar32>(cp), error);
  if (error) return;
  out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
}

inline std::string encode(const CodePoints& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t c : cps) append(out, c);
  return out;
}

inline std::int8_t category(char32_t c) { return u_charType(static_cast<UChar32>(c)); }

inline bool is_letter(char32_t c) { return u_isalpha(static_cast<UChar32>(c)); }

inline bool is_number(char32_t c) {
  const auto t = category(c);
  return t == U_DECIMAL_DIGIT_NUMBER || t == U_LETTER_NUMBER || t == U_OTHER_NUMBER;
}

inline bool is_whitespace(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

inline bool is_punctuation(char32_t c) { return u_ispunct(static_cast<UChar32>(c)); }

inline bool is_nonspacing_mark(char32_t c) { return category(c) == U_NON_SPACING_MARK; }

inline bool is_control(char32_t c) {
  const auto t = category(c);
  return t == U_CONTROL_CHAR || t == U_FORMAT_CHAR || t == U_PRIVATE_USE_CHAR ||
         t == U_SURROGATE || t == U_UNASSIGNED;
}

inline char32_t to_lower(char32_t c) {
  return static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
}

enum class Form { nfd, nfkd, nfc, nfkc };

inline std::string normalize(std::string_view s, Form form) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = nullptr;
  switch (form) {
    case Form::nfd: n = icu::Normalizer2::getNFDInstance(status); break;
    case Form::nfkd: n = icu::Normalizer2::getNFKDInstance(status); break;
    case Form::nfc: n = icu::Normalizer2::getNFCInstance(status); break;
    case Form::nfkc: n = icu::Normalizer2::getNFKCInstance(status); break;
  }
  if (U_FAILURE(status)) throw Error(std::string("ICU normalizer unavailable: ") + u_errorName(status));
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<std::int32_t>(s.size())));
  icu::UnicodeString out = n->normalize(in, status);
  if (U_FAILURE(status)) throw Error(std::string("normalization failed: ") + u_errorName(status));
  std::string utf8;
  out.toUTF8String(utf8);
  return utf8;
}

/// NFD, then drop nonspacing marks.
inline std::string strip_accents(std::string_view s) {
  CodePoints out;
  for (char32_t c : decode(normalize(s, Form::nfd)))
    if (!is_nonspacing_mark(c)) out.push_back(c);
  return encode(out);
}

}  // namespace complaints::unicode
