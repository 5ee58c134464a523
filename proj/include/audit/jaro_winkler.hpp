#pragma once

#include <algorithm>
#include <cstddef>
#include <string_view>
#include <vector>

namespace audit::resolve {

struct JaroCounts {
  size_t matches = 0;
  size_t half_transpositions = 0;  // matched characters that are out of order
  size_t prefix = 0;               // common prefix length, capped at 4
};

template <typename Char>
JaroCounts jaro_counts(std::basic_string_view<Char> a, std::basic_string_view<Char> b) {
  // Greedy matching depends on argument order; fix it so the score is symmetric.
  if (b.size() < a.size() || (b.size() == a.size() && b < a)) std::swap(a, b);
  JaroCounts c;
  const size_t la = a.size();
  const size_t lb = b.size();
  if (la == 0 || lb == 0) return c;
  const size_t window = std::max(la, lb) / 2 > 0 ? std::max(la, lb) / 2 - 1 : 0;

  char small[256];
  std::vector<char> large;
  char* a_used = small;
  if (la + lb > sizeof(small)) {
    large.resize(la + lb);
    a_used = large.data();
  }
  std::fill(a_used, a_used + la + lb, 0);
  char* b_used = a_used + la;

  for (size_t i = 0; i < la; ++i) {
    const size_t lo = i > window ? i - window : 0;
    const size_t hi = std::min(lb, i + window + 1);
    for (size_t j = lo; j < hi; ++j) {
      if (!b_used[j] && a[i] == b[j]) {
        a_used[i] = 1;
        b_used[j] = 1;
        ++c.matches;
        break;
      }
    }
  }
  if (c.matches == 0) return c;

  size_t k = 0;
  for (size_t i = 0; i < la; ++i) {
    if (!a_used[i]) continue;
    while (!b_used[k]) ++k;
    if (a[i] != b[k]) ++c.half_transpositions;
    ++k;
  }
  const size_t max_prefix = std::min<size_t>({4, la, lb});
  while (c.prefix < max_prefix && a[c.prefix] == b[c.prefix]) ++c.prefix;
  return c;
}

// Final similarity from the integer counts. Any implementation that derives
// identical counts gets a bit-identical score.
inline double jaro_winkler_from_counts(const JaroCounts& c, size_t la, size_t lb) {
  if (la == 0 && lb == 0) return 1.0;
  if (c.matches == 0) return 0.0;
  const double m = static_cast<double>(c.matches);
  const double t = static_cast<double>(c.half_transpositions / 2);
  const double jaro = (m / static_cast<double>(la) + m / static_cast<double>(lb) + (m - t) / m) / 3.0;
  if (jaro <= 0.7) return jaro;
  return jaro + static_cast<double>(c.prefix) * 0.1 * (1.0 - jaro);
}

// Jaro-Winkler similarity: prefix scale 0.1, prefix capped at 4 characters,
// boost applied above a Jaro score of 0.7.
template <typename Char>
double jaro_winkler(std::basic_string_view<Char> a, std::basic_string_view<Char> b) {
  return jaro_winkler_from_counts(jaro_counts(a, b), a.size(), b.size());
}

inline double jaro_winkler(std::string_view a, std::string_view b) { return jaro_winkler<char>(a, b); }
inline double jaro_winkler(std::u32string_view a, std::u32string_view b) { return jaro_winkler<char32_t>(a, b); }

}  // namespace audit::resolve
