#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "metersentry/errors.hpp"

namespace metersentry::csv {

/// Splits one CSV line on commas. The documented schemas never quote, so no
/// quote handling is attempted. Views point into `line`.
inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

/// Splits into a caller-owned buffer; avoids reallocating per line.
inline void split_into(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline double parse_double(std::string_view text, std::string_view context) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("bad numeric value '" + std::string(text) + "' in " +
                     std::string(context));
  }
  return value;
}

inline long long parse_int(std::string_view text, std::string_view context) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("bad integer value '" + std::string(text) + "' in " +
                     std::string(context));
  }
  return value;
}

/// Shortest decimal form that round-trips the exact double. Locale-free.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  out.append(buf, ptr);
}

/// Strips one trailing '\r' (files written on Windows).
inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace metersentry::csv
