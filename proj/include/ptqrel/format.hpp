#pragma once

#include <charconv>
#include <cstdio>
#include <string>

namespace ptqrel {

// Shortest decimal string that parses back to exactly `v`.
inline std::string format_shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace ptqrel
