#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "audit/error.hpp"
#include "audit/util/digest.hpp"
#include "audit/util/io.hpp"

// Factorial prompt design: manifest loading, grid enumeration and
// per-language template rendering.
namespace audit::grid {

using json = nlohmann::json;

inline const std::vector<std::string>& placeholder_names() {
  static const std::vector<std::string> names = {"role-and-task", "location", "k", "seniority", "field", "sub-field"};
  return names;
}

inline const std::set<std::string>& supported_languages() {
  static const std::set<std::string> langs = {"en", "de", "es"};
  return langs;
}

// A dimension value: canonical (English) label plus per-language surface forms.
struct Level {
  std::string label;
  std::map<std::string, std::string> surface;

  const std::string& surface_for(const std::string& lang) const {
    auto it = surface.find(lang);
    if (it == surface.end()) {
      throw ValidationError("missing '" + lang + "' translation for label '" + label + "'");
    }
    return it->second;
  }
};

struct LocationLevel : Level {
  std::string iso;
};

struct SeniorityLevel : Level {
  std::string stage;  // "junior" or "senior"
};

struct FieldLevel : Level {
  std::vector<Level> subfields;
};

struct DimensionSet {
  std::vector<Level> role;
  std::vector<std::string> language;
  std::vector<LocationLevel> location;
  std::vector<FieldLevel> field;
  std::vector<SeniorityLevel> seniority;
  std::vector<int> k;
  std::map<std::string, std::string> templates;

  size_t subfields_per_field() const { return field.empty() ? 0 : field.front().subfields.size(); }

  size_t grid_size() const {
    return role.size() * language.size() * location.size() * field.size() * subfields_per_field() *
           seniority.size() * k.size();
  }

  const FieldLevel& field_level(const std::string& label) const {
    for (const auto& f : field) {
      if (f.label == label) return f;
    }
    throw ValidationError("unknown field '" + label + "'");
  }

  const LocationLevel& location_level(const std::string& label) const {
    for (const auto& l : location) {
      if (l.label == label) return l;
    }
    throw ValidationError("unknown location '" + label + "'");
  }

  const SeniorityLevel& seniority_level(const std::string& label) const {
    for (const auto& s : seniority) {
      if (s.label == label) return s;
    }
    throw ValidationError("unknown seniority '" + label + "'");
  }

  const Level& role_level(const std::string& label) const {
    for (const auto& r : role) {
      if (r.label == label) return r;
    }
    throw ValidationError("unknown role '" + label + "'");
  }

  // Maps any surface form (any language) or canonical label of a field to
  // its canonical label.
  std::optional<std::string> canonical_field(std::string_view any) const {
    for (const auto& f : field) {
      if (f.label == any) return f.label;
      for (const auto& [lang, s] : f.surface) {
        if (s == any) return f.label;
      }
    }
    return std::nullopt;
  }

  // Maps any surface form or canonical label of a location to ISO 3166-1 alpha-2.
  std::optional<std::string> location_iso(std::string_view any) const {
    for (const auto& l : location) {
      if (l.label == any || l.iso == any) return l.iso;
      for (const auto& [lang, s] : l.surface) {
        if (s == any) return l.iso;
      }
    }
    return std::nullopt;
  }
};

// The seven chosen values of one prompt, by canonical label.
struct PromptDims {
  std::string role;
  std::string language;
  std::string location;
  std::string field;
  std::string subfield;
  std::string seniority;
  int k = 1;

  bool operator==(const PromptDims&) const = default;
};

struct PromptInstance {
  std::string prompt_id;
  PromptDims dims;
  int subfield_slot = 1;  // 1-based position of the subfield within its field
  std::string text;
};

// Stable identifier: SHA-256 over the canonical 7-tuple joined with the
// ASCII unit separator, truncated to 16 hex digits.
inline std::string prompt_id(const PromptDims& d) {
  static constexpr char kSep = '\x1f';
  std::string canon;
  for (const std::string* part : {&d.role, &d.language, &d.location, &d.field, &d.subfield, &d.seniority}) {
    canon += *part;
    canon.push_back(kSep);
  }
  canon += std::to_string(d.k);
  return digest::sha256_hex(canon).substr(0, 16);
}

namespace detail {

inline std::string require_string(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string() || j.at(key).get<std::string>().empty()) {
    throw ValidationError(where + ": missing or empty '" + key + "'");
  }
  return j.at(key).get<std::string>();
}

inline Level parse_level(const json& j, const std::string& dim) {
  Level lvl;
  lvl.label = require_string(j, "label", "dimension '" + dim + "'");
  if (j.contains("surface")) {
    if (!j.at("surface").is_object()) throw ValidationError("dimension '" + dim + "': 'surface' must be an object");
    for (const auto& [lang, s] : j.at("surface").items()) {
      if (!s.is_string() || s.get<std::string>().empty()) {
        throw ValidationError("dimension '" + dim + "': empty surface form for '" + lvl.label + "'");
      }
      lvl.surface[lang] = s.get<std::string>();
    }
  }
  return lvl;
}

inline const json& require_array(const json& dims, const char* key) {
  if (!dims.contains(key) || !dims.at(key).is_array() || dims.at(key).empty()) {
    throw ValidationError(std::string("dimension '") + key + "' missing or empty");
  }
  return dims.at(key);
}

template <typename T>
void require_unique(const std::vector<T>& levels, const std::string& dim) {
  std::set<std::string> seen;
  for (const auto& l : levels) {
    if (!seen.insert(l.label).second) throw ValidationError("dimension '" + dim + "': duplicate label '" + l.label + "'");
  }
}

}  // namespace detail

inline DimensionSet parse_manifest(const json& doc) {
  if (!doc.is_object() || !doc.contains("dimensions") || !doc.at("dimensions").is_object()) {
    throw ValidationError("manifest: missing 'dimensions' object");
  }
  const json& dims = doc.at("dimensions");
  DimensionSet out;

  for (const auto& r : detail::require_array(dims, "role")) out.role.push_back(detail::parse_level(r, "role"));
  detail::require_unique(out.role, "role");

  std::set<std::string> seen_lang;
  for (const auto& l : detail::require_array(dims, "language")) {
    std::string code = l.is_string() ? l.get<std::string>() : detail::require_string(l, "code", "dimension 'language'");
    if (!supported_languages().count(code)) {
      throw ValidationError("dimension 'language': unsupported code '" + code + "'");
    }
    if (!seen_lang.insert(code).second) throw ValidationError("dimension 'language': duplicate code '" + code + "'");
    out.language.push_back(code);
  }

  for (const auto& l : detail::require_array(dims, "location")) {
    LocationLevel loc;
    static_cast<Level&>(loc) = detail::parse_level(l, "location");
    loc.iso = detail::require_string(l, "iso", "dimension 'location' (" + loc.label + ")");
    if (loc.iso.size() != 2) throw ValidationError("dimension 'location': '" + loc.iso + "' is not ISO 3166-1 alpha-2");
    out.location.push_back(std::move(loc));
  }
  detail::require_unique(out.location, "location");

  for (const auto& f : detail::require_array(dims, "field")) {
    FieldLevel fl;
    static_cast<Level&>(fl) = detail::parse_level(f, "field");
    if (!f.contains("subfields") || !f.at("subfields").is_array() || f.at("subfields").empty()) {
      throw ValidationError("dimension 'subfield': field '" + fl.label + "' has no subfields");
    }
    for (const auto& s : f.at("subfields")) fl.subfields.push_back(detail::parse_level(s, "subfield"));
    detail::require_unique(fl.subfields, "subfield");
    out.field.push_back(std::move(fl));
  }
  detail::require_unique(out.field, "field");
  for (const auto& f : out.field) {
    if (f.subfields.size() != out.field.front().subfields.size()) {
      throw ValidationError("dimension 'subfield': field '" + f.label + "' has " + std::to_string(f.subfields.size()) +
                            " subfields, expected " + std::to_string(out.field.front().subfields.size()));
    }
  }

  for (const auto& s : detail::require_array(dims, "seniority")) {
    SeniorityLevel sl;
    static_cast<Level&>(sl) = detail::parse_level(s, "seniority");
    sl.stage = detail::require_string(s, "stage", "dimension 'seniority' (" + sl.label + ")");
    if (sl.stage != "junior" && sl.stage != "senior") {
      throw ValidationError("dimension 'seniority': stage must be 'junior' or 'senior', got '" + sl.stage + "'");
    }
    out.seniority.push_back(std::move(sl));
  }
  detail::require_unique(out.seniority, "seniority");

  std::set<int> seen_k;
  for (const auto& k : detail::require_array(dims, "k")) {
    if (!k.is_number_integer() || k.get<int>() < 1) throw ValidationError("dimension 'k': values must be positive integers");
    if (!seen_k.insert(k.get<int>()).second) throw ValidationError("dimension 'k': duplicate value");
    out.k.push_back(k.get<int>());
  }

  if (!doc.contains("templates") || !doc.at("templates").is_object()) {
    throw ValidationError("manifest: missing 'templates' object");
  }
  for (const auto& [lang, t] : doc.at("templates").items()) {
    if (!t.is_string()) throw ValidationError("templates: '" + lang + "' must be a string");
    out.templates[lang] = t.get<std::string>();
  }
  for (const auto& lang : out.language) {
    if (!out.templates.count(lang)) throw ValidationError("templates: no template for language '" + lang + "'");
  }
  return out;
}

inline DimensionSet load_manifest(const std::filesystem::path& path) {
  io::require_file(path, "manifest");
  return parse_manifest(io::read_json(path));
}

namespace detail {

struct Segment {
  bool placeholder = false;
  std::string text;  // literal text, or placeholder name
};

// Splits a template into literal and `{name}` segments. Any brace group made
// of identifier characters counts as a placeholder.
inline std::vector<Segment> split_template(std::string_view tpl) {
  std::vector<Segment> out;
  std::string lit;
  size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const size_t close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = tpl.substr(i + 1, close - i - 1);
        const bool ident = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
        });
        if (ident) {
          if (!lit.empty()) out.push_back({false, std::move(lit)});
          lit.clear();
          out.push_back({true, std::string(name)});
          i = close + 1;
          continue;
        }
      }
    }
    lit.push_back(tpl[i]);
    ++i;
  }
  if (!lit.empty()) out.push_back({false, std::move(lit)});
  return out;
}

}  // namespace detail

// Checks that a template uses exactly the six known placeholders.
inline void validate_template(std::string_view tpl) {
  std::set<std::string> found;
  std::vector<std::string> unknown;
  for (const auto& seg : detail::split_template(tpl)) {
    if (!seg.placeholder) continue;
    const auto& names = placeholder_names();
    if (std::find(names.begin(), names.end(), seg.text) == names.end()) {
      unknown.push_back("{" + seg.text + "}");
    } else {
      found.insert(seg.text);
    }
  }
  std::vector<std::string> missing;
  for (const auto& n : placeholder_names()) {
    if (!found.count(n)) missing.push_back("{" + n + "}");
  }
  if (!unknown.empty() || !missing.empty()) {
    std::string msg = "template error:";
    if (!unknown.empty()) {
      msg += " unresolved placeholder(s)";
      for (const auto& u : unknown) msg += " " + u;
      msg += ";";
    }
    if (!missing.empty()) {
      msg += " missing placeholder(s)";
      for (const auto& m : missing) msg += " " + m;
    }
    throw ValidationError(msg);
  }
}

// Surface forms substituted into the template for a given choice.
inline std::map<std::string, std::string> surface_values(const DimensionSet& dims, const PromptDims& choice) {
  const std::string& lang = choice.language;
  const FieldLevel& field = dims.field_level(choice.field);
  const Level* sub = nullptr;
  for (const auto& s : field.subfields) {
    if (s.label == choice.subfield) sub = &s;
  }
  if (sub == nullptr) throw ValidationError("subfield '" + choice.subfield + "' does not belong to field '" + choice.field + "'");
  return {
      {"role-and-task", dims.role_level(choice.role).surface_for(lang)},
      {"location", dims.location_level(choice.location).surface_for(lang)},
      {"k", std::to_string(choice.k)},
      {"seniority", dims.seniority_level(choice.seniority).surface_for(lang)},
      {"field", field.surface_for(lang)},
      {"sub-field", sub->surface_for(lang)},
  };
}

inline PromptInstance render(const DimensionSet& dims, const PromptDims& choice) {
  auto tpl_it = dims.templates.find(choice.language);
  if (tpl_it == dims.templates.end()) throw ValidationError("no template for language '" + choice.language + "'");
  validate_template(tpl_it->second);
  const auto values = surface_values(dims, choice);

  PromptInstance p;
  p.dims = choice;
  p.prompt_id = prompt_id(choice);
  const FieldLevel& field = dims.field_level(choice.field);
  for (size_t i = 0; i < field.subfields.size(); ++i) {
    if (field.subfields[i].label == choice.subfield) p.subfield_slot = static_cast<int>(i) + 1;
  }
  for (const auto& seg : detail::split_template(tpl_it->second)) {
    p.text += seg.placeholder ? values.at(seg.text) : seg.text;
  }
  return p;
}

// Recovers placeholder values from a rendered text by aligning it with its
// template's literal segments. Returns nullopt when the text does not fit.
inline std::optional<std::map<std::string, std::string>> extract_placeholders(std::string_view tpl, std::string_view text) {
  const auto segs = detail::split_template(tpl);
  std::map<std::string, std::string> out;
  size_t pos = 0;
  for (size_t i = 0; i < segs.size(); ++i) {
    if (!segs[i].placeholder) {
      if (text.substr(pos, segs[i].text.size()) != segs[i].text) return std::nullopt;
      pos += segs[i].text.size();
      continue;
    }
    size_t end = text.size();
    if (i + 1 < segs.size() && !segs[i + 1].placeholder) {
      end = text.find(segs[i + 1].text, pos);
      if (end == std::string_view::npos) return std::nullopt;
    }
    out[segs[i].text] = std::string(text.substr(pos, end - pos));
    pos = end;
  }
  if (pos != text.size()) return std::nullopt;
  return out;
}

// Full Cartesian product in declaration order: role, language, location,
// field, subfield (within its field), seniority, k.
inline std::vector<PromptInstance> enumerate_grid(const DimensionSet& dims) {
  std::vector<PromptInstance> out;
  out.reserve(dims.grid_size());
  for (const auto& role : dims.role) {
    for (const auto& lang : dims.language) {
      for (const auto& loc : dims.location) {
        for (const auto& field : dims.field) {
          for (const auto& sub : field.subfields) {
            for (const auto& sen : dims.seniority) {
              for (int k : dims.k) {
                out.push_back(render(dims, {role.label, lang, loc.label, field.label, sub.label, sen.label, k}));
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline json to_json(const PromptInstance& p) {
  return json{{"prompt_id", p.prompt_id},
              {"role", p.dims.role},
              {"language", p.dims.language},
              {"location", p.dims.location},
              {"field", p.dims.field},
              {"subfield", p.dims.subfield},
              {"subfield_slot", p.subfield_slot},
              {"seniority", p.dims.seniority},
              {"k", p.dims.k},
              {"text", p.text}};
}

inline PromptInstance prompt_from_json(const json& j) {
  try {
    PromptInstance p;
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.dims.role = j.at("role").get<std::string>();
    p.dims.language = j.at("language").get<std::string>();
    p.dims.location = j.at("location").get<std::string>();
    p.dims.field = j.at("field").get<std::string>();
    p.dims.subfield = j.at("subfield").get<std::string>();
    p.dims.seniority = j.at("seniority").get<std::string>();
    p.dims.k = j.at("k").get<int>();
    p.subfield_slot = j.value("subfield_slot", 1);
    p.text = j.at("text").get<std::string>();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("prompt record: ") + e.what());
  }
}

inline std::vector<PromptInstance> read_grid(const std::filesystem::path& path) {
  io::require_file(path, "grid file");
  std::vector<PromptInstance> out;
  io::for_each_jsonl(path, [&](size_t, const json& j) { out.push_back(prompt_from_json(j)); });
  return out;
}

}  // namespace audit::grid
