#pragma once

#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "gridfreq/errors.hpp"

namespace gridfreq::detail {

#if defined(__GNUC__)
__attribute__((format(printf, 1, 2)))
#endif
inline std::string
format(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out;
  if (n > 0) {
    out.resize(static_cast<size_t>(n));
    std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  }
  va_end(args);
  return out;
}

/// Fixed-point rendering used for table cells, e.g. fixed(59.902, 3).
inline std::string fixed(double x, int decimals) {
  return format("%.*f", decimals, x);
}

/// Renders with one decimal, trimming a trailing ".0" so whole numbers
/// print as integers (23 -> "23", 4.2 -> "4.2").
inline std::string one_decimal_trimmed(double x) {
  std::string s = format("%.1f", x);
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, ".0") == 0) {
    s.erase(s.size() - 2);
  }
  return s;
}

}  // namespace gridfreq::detail

namespace gridfreq {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw ParseError("cannot read file: " + path);
  return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open file for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw RuntimeFailure("write failed: " + path);
}

}  // namespace gridfreq
