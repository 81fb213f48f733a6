#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "earl/error.hpp"

namespace earl {

struct RecordOrigin {
  std::uint32_t split_id = 0;
  std::uint64_t line_start = 0;
  friend bool operator==(const RecordOrigin&, const RecordOrigin&) = default;
  friend auto operator<=>(const RecordOrigin&, const RecordOrigin&) = default;
};

// A record value is a numeric scalar, a numeric vector, or a categorical token.
using Value = std::variant<double, std::vector<double>, std::string>;

struct Record {
  std::string key;
  Value value;
  RecordOrigin origin;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size();
}

}  // namespace detail

inline Value parse_value(std::string_view text) {
  double d;
  if (detail::parse_double(text, d)) return d;
  if (text.find(',') != std::string_view::npos) {
    std::vector<double> v;
    std::size_t start = 0;
    bool numeric = true;
    while (start <= text.size()) {
      std::size_t comma = text.find(',', start);
      std::string_view part =
          comma == std::string_view::npos ? text.substr(start) : text.substr(start, comma - start);
      double x;
      if (!detail::parse_double(part, x)) {
        numeric = false;
        break;
      }
      v.push_back(x);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (numeric && !v.empty()) return v;
  }
  return std::string(text);
}

// One line, "key\tvalue", without the trailing newline.
inline Record parse_record(std::string_view line, RecordOrigin origin) {
  std::size_t tab = line.find('\t');
  if (tab == std::string_view::npos) throw Error("malformed record: missing tab separator");
  if (tab == 0) throw Error("malformed record: empty key");
  return Record{std::string(line.substr(0, tab)), parse_value(line.substr(tab + 1)), origin};
}

inline double scalar_value(const Record& r) {
  if (const double* d = std::get_if<double>(&r.value)) return *d;
  throw Error("record value is not a numeric scalar (key=" + r.key + ")");
}

inline std::vector<double> point_value(const Record& r) {
  if (const auto* v = std::get_if<std::vector<double>>(&r.value)) return *v;
  if (const double* d = std::get_if<double>(&r.value)) return {*d};
  throw Error("record value is not numeric (key=" + r.key + ")");
}

inline const std::string* token_value(const Record& r) {
  return std::get_if<std::string>(&r.value);
}

}  // namespace earl
