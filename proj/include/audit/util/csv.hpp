#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "audit/error.hpp"

namespace audit::csv {

using Row = std::vector<std::string>;

// RFC 4180 reader: quoted fields may contain separators, doubled quotes and
// line breaks. Tracks the physical line where each record starts so callers
// can emit line-numbered diagnostics.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  bool next(Row& row) {
    row.clear();
    record_line_ = line_ + 1;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int ch;
    while ((ch = in_.get()) != EOF) {
      any = true;
      const char c = static_cast<char>(ch);
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        row.push_back(std::move(field));
        field.clear();
      } else if (c == '\r') {
        if (in_.peek() == '\n') continue;
        ++line_;
        row.push_back(std::move(field));
        return true;
      } else if (c == '\n') {
        ++line_;
        row.push_back(std::move(field));
        return true;
      } else {
        field.push_back(c);
      }
    }
    if (in_quotes) throw ParseError("unterminated quoted field starting at line " + std::to_string(record_line_));
    if (!any) return false;
    row.push_back(std::move(field));
    return true;
  }

  // 1-based physical line on which the last returned record started.
  size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  size_t line_ = 0;
  size_t record_line_ = 0;
};

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_row(std::ostream& out, const Row& row) {
  for (size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << quote(row[i]);
  }
  out << '\n';
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::optional<double> parse_optional_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

inline int64_t parse_int(std::string_view s) {
  int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

// Column lookup by header name.
class Header {
 public:
  Header() = default;
  explicit Header(Row names) : names_(std::move(names)) {}

  size_t index(std::string_view name) const {
    for (size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    throw ParseError("missing column '" + std::string(name) + "'");
  }

  std::optional<size_t> find(std::string_view name) const {
    for (size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return std::nullopt;
  }

  const Row& names() const { return names_; }

 private:
  Row names_;
};

}  // namespace audit::csv
