#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audit/corpus.hpp"
#include "audit/util/rng.hpp"

// Seeded synthetic scholar populations for demos, mock campaigns and
// scale tests.
namespace audit::synthetic {

inline const std::vector<std::string>& onsets() {
  static const std::vector<std::string> v = {"b",  "br", "c",  "ch", "d",  "f",  "g",  "gr", "h",  "j",  "k",
                                             "l",  "m",  "n",  "p",  "pr", "r",  "s",  "sh", "st", "t",  "tr",
                                             "v",  "w",  "y",  "z",  "bl", "cl", "dr", "fl", "kr", "sl", ""};
  return v;
}

inline const std::vector<std::string>& nuclei() {
  static const std::vector<std::string> v = {"a", "e", "i", "o", "u", "ai", "ei", "ou", "ia", "ie", "oa", "y"};
  return v;
}

inline const std::vector<std::string>& codas() {
  static const std::vector<std::string> v = {"", "", "n", "r", "s", "l", "m", "t", "nd", "rt", "ck", "ng", "x", "sk"};
  return v;
}

inline std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

inline std::string syllables(rng::Rng& r, int min_syl, int max_syl) {
  const int n = min_syl + static_cast<int>(r.below(static_cast<uint64_t>(max_syl - min_syl + 1)));
  std::string s;
  for (int i = 0; i < n; ++i) {
    s += onsets()[r.below(onsets().size())];
    s += nuclei()[r.below(nuclei().size())];
    s += codas()[r.below(codas().size())];
  }
  return s;
}

inline const std::vector<std::string>& countries() {
  static const std::vector<std::string> v = {"DE", "JP", "CA", "EC", "ZA", "US", "GB", "FR", "CN", "BR", "IN", "ES"};
  return v;
}

struct Options {
  size_t n = 1000;
  uint64_t seed = 1;
  size_t first_name_pool = 4000;
  size_t last_name_pool = 200000;
};

// Names come from fixed syllable pools so homonyms occur at realistic rates.
inline std::vector<corpus::ScholarRecord> scholars(const Options& opt) {
  rng::Rng pool_rng(opt.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::string> firsts(opt.first_name_pool);
  std::vector<std::string> lasts(opt.last_name_pool);
  for (auto& f : firsts) f = capitalize(syllables(pool_rng, 1, 3));
  for (auto& l : lasts) l = capitalize(syllables(pool_rng, 2, 4));

  rng::Rng r(opt.seed);
  std::vector<corpus::ScholarRecord> out;
  out.reserve(opt.n);
  const auto& fields = corpus::disciplines();
  for (size_t i = 0; i < opt.n; ++i) {
    corpus::ScholarRecord s;
    s.scholar_id = "S" + std::to_string(i + 1);
    const std::string& first = firsts[r.below(firsts.size())];
    s.lastname = lasts[r.below(lasts.size())];
    s.display_name = first + " " + s.lastname;
    s.field = fields[r.below(fields.size())];
    const double g = r.uniform();
    s.gender = g < 0.3 ? corpus::Gender::female : (g < 0.8 ? corpus::Gender::male : corpus::Gender::unknown);
    const double e = r.uniform();
    s.ethnicity = e < 0.55   ? corpus::Ethnicity::White
                  : e < 0.8  ? corpus::Ethnicity::Asian
                  : e < 0.87 ? corpus::Ethnicity::Hispanic_or_Latino
                  : e < 0.92 ? corpus::Ethnicity::Black_or_African_American
                             : corpus::Ethnicity::Unknown;
    if (r.chance(0.95)) s.year_first_pub = 1975 + static_cast<int>(r.below(50));
    if (r.chance(0.97)) {
      // Heavy-tailed counts.
      const double u = r.uniform();
      s.works_count = static_cast<int64_t>(1.0 / (0.005 + u * u) );
      s.citation_count = static_cast<int64_t>(*s.works_count * (1 + r.below(60)) + r.below(20));
    }
    if (r.chance(0.9)) s.country_code = countries()[r.below(countries().size())];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace audit::synthetic
