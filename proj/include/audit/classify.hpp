#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "audit/error.hpp"
#include "audit/raw_response.hpp"
#include "audit/util/io.hpp"
#include "audit/util/text.hpp"

// Rule-based taxonomy of LLM replies: valid, fixed, empty, refused, invalid.
namespace audit::classify {

using json = nlohmann::json;

enum class Category { valid, fixed, empty, refused, invalid };
enum class Normalization { unchanged, cleaned };

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::valid: return "valid";
    case Category::fixed: return "fixed";
    case Category::empty: return "empty";
    case Category::refused: return "refused";
    default: return "invalid";
  }
}

inline Category parse_category(std::string_view s) {
  for (auto c : {Category::valid, Category::fixed, Category::empty, Category::refused, Category::invalid}) {
    if (s == to_string(c)) return c;
  }
  throw ParseError("unknown category '" + std::string(s) + "'");
}

inline std::string_view to_string(Normalization n) { return n == Normalization::cleaned ? "cleaned" : "unchanged"; }

struct Affiliation {
  std::string position;
  std::string affiliation;
};

struct RecommendationRecord {
  std::string name;
  std::string lastname;
  std::vector<Affiliation> current_affiliations;
  std::vector<std::string> areas_of_research_or_work;
  std::string reason;
  std::string source = "N/A";
};

struct ClassifiedResponse {
  std::string prompt_id;
  std::string llm_id;
  int run_idx = 0;
  Category category = Category::invalid;
  std::optional<Normalization> normalization;
  std::vector<RecommendationRecord> records;
};

// Declination markers, matched as substrings of the lower-cased,
// accent-stripped reply.
struct RefusalPatterns {
  std::vector<std::string> phrases;

  static RefusalPatterns defaults() {
    RefusalPatterns p;
    p.phrases = {
        // en
        "i cannot recommend", "i can't recommend", "i can not recommend", "i am unable to", "i'm unable to",
        "i am not able to", "i'm not able to", "i cannot provide", "i can't provide", "i won't provide",
        "i cannot fulfill", "i can't fulfill", "i cannot comply", "i can't help with", "i must decline",
        "i have to decline", "i'm sorry, but", "i am sorry, but", "unable to provide specific",
        "cannot assess scholarly merit", "not appropriate for me to", "as an ai",
        // de
        "ich kann keine", "ich kann leider", "kann ich nicht", "ich bin nicht in der lage", "es tut mir leid",
        "ich muss ablehnen", "nicht moglich, konkrete", "als ki",
        // es
        "no puedo", "lo siento", "no me es posible", "no estoy en condiciones", "debo declinar",
        "como ia", "como modelo de lenguaje"};
    return p;
  }

  static RefusalPatterns load(const std::filesystem::path& path) {
    io::require_file(path, "refusal pattern file");
    const json doc = io::read_json(path);
    RefusalPatterns p;
    auto add = [&](const json& arr) {
      if (!arr.is_array()) throw ValidationError(path.string() + ": pattern lists must be arrays");
      for (const auto& s : arr) {
        if (!s.is_string() || s.get<std::string>().empty()) throw ValidationError(path.string() + ": empty pattern");
        p.phrases.push_back(s.get<std::string>());
      }
    };
    if (doc.is_array()) {
      add(doc);
    } else if (doc.is_object() && doc.contains("patterns")) {
      const json& pats = doc.at("patterns");
      if (pats.is_array()) {
        add(pats);
      } else {
        for (const auto& [lang, arr] : pats.items()) add(arr);
      }
    } else {
      throw ValidationError(path.string() + ": expected an array or an object with 'patterns'");
    }
    return p;
  }

  bool matches(std::string_view reply) const {
    const std::string hay = fold(reply);
    return std::any_of(phrases.begin(), phrases.end(), [&](const std::string& ph) {
      return hay.find(fold(ph)) != std::string::npos;
    });
  }

  static std::string fold(std::string_view s) {
    std::string out = text::to_lower(text::normalize_name(s).value);
    // Typographic apostrophes are common in model output.
    for (size_t pos; (pos = out.find("\xE2\x80\x99")) != std::string::npos;) out.replace(pos, 3, "'");
    return out;
  }
};

namespace detail {

inline std::string strip_reasoning(std::string_view s) {
  std::string out(s);
  for (;;) {
    const auto open = out.find("<think>");
    if (open == std::string::npos) break;
    const auto close = out.find("</think>", open);
    if (close == std::string::npos) {
      out.erase(open);
      break;
    }
    out.erase(open, close + 8 - open);
  }
  return out;
}

// Drops markdown fence lines (``` or ```json).
inline std::string strip_fences(std::string_view s) {
  std::string out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    const std::string line = text::trim(s.substr(pos, nl - pos));
    if (line.rfind("```", 0) != 0) {
      out.append(s.substr(pos, nl - pos));
      if (nl < s.size()) out.push_back('\n');
    }
    pos = nl + 1;
  }
  return out;
}

struct Scan {
  bool closed = false;
  size_t end = 0;                   // one past the closing ']' when closed
  std::vector<size_t> record_ends;  // one past each complete top-level '}'
};

// Bracket scan of the array starting at `start`, string- and escape-aware.
inline Scan scan_array(std::string_view s, size_t start) {
  Scan sc;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (size_t i = start; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '[':
      case '{': ++depth; break;
      case '}':
        --depth;
        if (depth == 1) sc.record_ends.push_back(i + 1);
        break;
      case ']':
        --depth;
        if (depth == 0) {
          sc.closed = true;
          sc.end = i + 1;
          return sc;
        }
        break;
      default: break;
    }
    if (depth < 0) return sc;
  }
  return sc;
}

inline std::string string_field(const json& obj, const char* key) {
  if (!obj.contains(key)) return {};
  const json& v = obj.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  return {};
}

inline RecommendationRecord to_record(const json& obj) {
  RecommendationRecord r;
  r.name = text::trim(string_field(obj, "name"));
  r.lastname = text::trim(string_field(obj, "lastname"));
  if (obj.contains("current_affiliations")) {
    const json& aff = obj.at("current_affiliations");
    if (aff.is_array()) {
      for (const auto& a : aff) {
        if (a.is_object()) {
          r.current_affiliations.push_back({string_field(a, "position"), string_field(a, "affiliation")});
        } else if (a.is_string()) {
          r.current_affiliations.push_back({"", a.get<std::string>()});
        }
      }
    } else if (aff.is_string()) {
      r.current_affiliations.push_back({"", aff.get<std::string>()});
    } else if (aff.is_object()) {
      r.current_affiliations.push_back({string_field(aff, "position"), string_field(aff, "affiliation")});
    }
  }
  if (obj.contains("areas_of_research_or_work")) {
    const json& areas = obj.at("areas_of_research_or_work");
    if (areas.is_array()) {
      for (const auto& a : areas) {
        if (a.is_string()) r.areas_of_research_or_work.push_back(a.get<std::string>());
      }
    } else if (areas.is_string()) {
      r.areas_of_research_or_work.push_back(areas.get<std::string>());
    }
  }
  r.reason = string_field(obj, "reason");
  if (obj.contains("source")) r.source = string_field(obj, "source");
  return r;
}

inline bool schema_complete(const RecommendationRecord& r) { return !r.name.empty() && !r.lastname.empty(); }

enum class ArrayVerdict { not_records, complete, incomplete };

// Parses text as an array of recommendation objects.
inline ArrayVerdict parse_records(std::string_view text, std::vector<RecommendationRecord>& out) {
  json arr = json::parse(text, nullptr, false);
  if (arr.is_discarded() || !arr.is_array() || arr.empty()) return ArrayVerdict::not_records;
  if (!std::all_of(arr.begin(), arr.end(), [](const json& e) { return e.is_object(); })) return ArrayVerdict::not_records;
  // Nested arrays of objects (affiliations) are not recommendation lists.
  if (std::none_of(arr.begin(), arr.end(), [](const json& e) { return e.contains("name") || e.contains("lastname"); })) {
    return ArrayVerdict::not_records;
  }
  out.clear();
  bool complete = true;
  for (const auto& obj : arr) {
    out.push_back(to_record(obj));
    complete = complete && schema_complete(out.back());
  }
  return complete ? ArrayVerdict::complete : ArrayVerdict::incomplete;
}

inline void apply_normalization(ClassifiedResponse& c) {
  bool changed = false;
  for (auto& r : c.records) {
    auto n = text::normalize_name(r.name);
    auto l = text::normalize_name(r.lastname);
    changed = changed || n.changed || l.changed;
    r.name = std::move(n.value);
    r.lastname = std::move(l.value);
  }
  c.normalization = changed ? Normalization::cleaned : Normalization::unchanged;
}

}  // namespace detail

// Decision order: empty, strict parse, truncation repair, refusal, invalid.
inline ClassifiedResponse classify_text(std::string_view raw_text, const RefusalPatterns& patterns) {
  ClassifiedResponse out;
  const std::string clean_utf8 = text::sanitize_utf8(raw_text);
  if (text::trim(clean_utf8).empty()) {
    out.category = Category::empty;
    return out;
  }
  const std::string body = detail::strip_fences(detail::strip_reasoning(clean_utf8));

  std::optional<detail::Scan> truncated;
  size_t truncated_start = 0;
  for (size_t start = body.find('['); start != std::string::npos; start = body.find('[', start + 1)) {
    const detail::Scan sc = detail::scan_array(body, start);
    if (!sc.closed) {
      if (!truncated && !sc.record_ends.empty()) {
        truncated = sc;
        truncated_start = start;
      }
      continue;
    }
    std::vector<RecommendationRecord> recs;
    const auto verdict = detail::parse_records(std::string_view(body).substr(start, sc.end - start), recs);
    if (verdict == detail::ArrayVerdict::not_records) continue;
    if (verdict == detail::ArrayVerdict::complete) {
      out.category = Category::valid;
      out.records = std::move(recs);
      detail::apply_normalization(out);
      return out;
    }
    // Parsable array with empty required fields.
    out.category = Category::invalid;
    return out;
  }

  if (truncated) {
    for (auto it = truncated->record_ends.rbegin(); it != truncated->record_ends.rend(); ++it) {
      std::string prefix = body.substr(truncated_start, *it - truncated_start);
      prefix += "]";
      std::vector<RecommendationRecord> recs;
      const auto verdict = detail::parse_records(prefix, recs);
      if (verdict == detail::ArrayVerdict::not_records) continue;
      if (verdict == detail::ArrayVerdict::complete) {
        out.category = Category::fixed;
        out.records = std::move(recs);
        detail::apply_normalization(out);
        return out;
      }
      break;
    }
  }

  out.category = patterns.matches(body) ? Category::refused : Category::invalid;
  return out;
}

inline ClassifiedResponse classify_response(const RawResponse& raw, const RefusalPatterns& patterns) {
  ClassifiedResponse c = classify_text(raw.raw_text, patterns);
  c.prompt_id = raw.prompt_id;
  c.llm_id = raw.llm_id;
  c.run_idx = raw.run_idx;
  return c;
}

inline ClassifiedResponse classify_response(const RawResponse& raw) {
  static const RefusalPatterns defaults = RefusalPatterns::defaults();
  return classify_response(raw, defaults);
}

inline json to_json(const RecommendationRecord& r) {
  json aff = json::array();
  for (const auto& a : r.current_affiliations) aff.push_back({{"position", a.position}, {"affiliation", a.affiliation}});
  return json{{"name", r.name},
              {"lastname", r.lastname},
              {"current_affiliations", aff},
              {"areas_of_research_or_work", r.areas_of_research_or_work},
              {"reason", r.reason},
              {"source", r.source}};
}

inline json to_json(const ClassifiedResponse& c) {
  json recs = json::array();
  for (const auto& r : c.records) recs.push_back(to_json(r));
  json j{{"prompt_id", c.prompt_id}, {"llm_id", c.llm_id}, {"run_idx", c.run_idx}, {"category", to_string(c.category)}};
  j["normalization"] = c.normalization ? json(to_string(*c.normalization)) : json(nullptr);
  j["records"] = std::move(recs);
  return j;
}

inline ClassifiedResponse classified_from_json(const json& j) {
  try {
    ClassifiedResponse c;
    c.prompt_id = j.at("prompt_id").get<std::string>();
    c.llm_id = j.at("llm_id").get<std::string>();
    c.run_idx = j.at("run_idx").get<int>();
    c.category = parse_category(j.at("category").get<std::string>());
    if (j.contains("normalization") && !j.at("normalization").is_null()) {
      c.normalization = j.at("normalization").get<std::string>() == "cleaned" ? Normalization::cleaned : Normalization::unchanged;
    }
    for (const auto& r : j.at("records")) c.records.push_back(detail::to_record(r));
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("classified record: ") + e.what());
  }
}

}  // namespace audit::classify
