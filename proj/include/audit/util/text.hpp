#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "audit/error.hpp"

namespace audit::text {

struct Normalized {
  std::string value;
  bool changed = false;
};

namespace detail {

inline const icu::Normalizer2& nfd() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status) || n == nullptr) throw Error("ICU NFD normalizer unavailable");
  return *n;
}

inline icu::UnicodeString decompose(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = nfd().normalize(src, status);
  if (U_FAILURE(status)) return src;
  return out;
}

inline bool is_mark(UChar32 c) {
  const auto cat = u_charType(c);
  return cat == U_NON_SPACING_MARK || cat == U_ENCLOSING_MARK || cat == U_COMBINING_SPACING_MARK;
}

inline std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

}  // namespace detail

// Replaces invalid UTF-8 sequences with U+FFFD so downstream consumers
// (JSON serializers in particular) never see malformed bytes.
inline std::string sanitize_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  int32_t i = 0;
  const auto len = static_cast<int32_t>(s.size());
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  while (i < len) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(p, i, len, c);
    if (c < 0) {
      out += "\xEF\xBF\xBD";
    } else {
      out.append(s.data() + start, static_cast<size_t>(i - start));
    }
  }
  return out;
}

// Canonical ASCII-leaning form of a person name: canonical decomposition,
// combining marks removed, sharp s expanded, whitespace runs collapsed and
// trimmed. Characters without a decomposition (e.g. CJK) pass through.
inline Normalized normalize_name(std::string_view s) {
  const icu::UnicodeString d = detail::decompose(s);
  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < d.length();) {
    const UChar32 c = d.char32At(i);
    i += U16_LENGTH(c);
    if (detail::is_mark(c)) continue;
    if (u_isUWhiteSpace(c)) {
      pending_space = out.length() > 0;
      continue;
    }
    if (pending_space) {
      out.append(static_cast<UChar32>(' '));
      pending_space = false;
    }
    if (c == 0x00DF) {
      out.append(icu::UnicodeString("ss"));
    } else if (c == 0x1E9E) {
      out.append(icu::UnicodeString("SS"));
    } else {
      out.append(c);
    }
  }
  Normalized result;
  result.value = detail::to_utf8(out);
  result.changed = result.value != s;
  return result;
}

// Matching key: lower-case, accent-stripped, every run of non-alphabetic
// characters collapsed to one space, trimmed.
inline std::string match_key(std::string_view s) {
  const icu::UnicodeString d = detail::decompose(s);
  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < d.length();) {
    UChar32 c = d.char32At(i);
    i += U16_LENGTH(c);
    if (detail::is_mark(c)) continue;
    if (c == 0x00DF || c == 0x1E9E) {
      if (pending_space) out.append(static_cast<UChar32>(' '));
      pending_space = false;
      out.append(icu::UnicodeString("ss"));
      continue;
    }
    if (!u_isalpha(c)) {
      pending_space = out.length() > 0;
      continue;
    }
    if (pending_space) {
      out.append(static_cast<UChar32>(' '));
      pending_space = false;
    }
    out.append(u_tolower(c));
  }
  return detail::to_utf8(out);
}

// Lower-cases with the root locale, independent of the process locale.
inline std::string to_lower(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u.toLower(icu::Locale::getRoot());
  return detail::to_utf8(u);
}

inline std::u32string to_u32(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  int32_t i = 0;
  const auto len = static_cast<int32_t>(s.size());
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  while (i < len) {
    UChar32 c;
    U8_NEXT(p, i, len, c);
    out.push_back(c < 0 ? U'�' : static_cast<char32_t>(c));
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

// Splits on whitespace and hyphens, dropping empty pieces.
inline std::vector<std::u32string> name_tokens(const std::u32string& s) {
  std::vector<std::u32string> tokens;
  std::u32string cur;
  for (char32_t c : s) {
    if (c == U' ' || c == U'-' || c == U'\t' || c == U'‐' || c == U'‑') {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

}  // namespace audit::text
