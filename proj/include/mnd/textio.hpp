#pragma once

// Small text helpers shared by the CSV/checkpoint readers and writers.
// Doubles are serialized with the shortest representation that round-trips
// bit-exactly (std::to_chars / std::from_chars).

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mnd {

inline std::string format_double(double value) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

inline bool parse_int(std::string_view text, long long& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  size_t start = 0;
  for (size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == sep) {
      parts.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

inline bool is_comment_or_blank(std::string_view line) {
  for (char c : line) {
    if (c == ' ' || c == '\t') continue;
    return c == '#';
  }
  return true;
}

}  // namespace mnd
