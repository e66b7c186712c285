#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace fluidswarm::csv {

/// Significant digits used by every CSV writer in the project.
inline constexpr int kPrecision = 12;

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", kPrecision, v);
  return buf;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double to_double(std::string_view s, std::size_t line) {
  s = trim(s);
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) {
    throw ParseError(line, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline long long to_int(std::string_view s, std::size_t line) {
  s = trim(s);
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) {
    throw ParseError(line, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

/// Lines of the form "# key=value" preceding a CSV header.
using Metadata = std::map<std::string, std::string>;

inline void write_metadata(std::ostream& os, const Metadata& meta) {
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
}

/// Parses a "# key=value" line into `meta`; returns false if the line is not a comment.
inline bool read_metadata_line(std::string_view line, Metadata& meta) {
  if (line.empty() || line.front() != '#') return false;
  line.remove_prefix(1);
  line = trim(line);
  const auto eq = line.find('=');
  if (eq != std::string_view::npos) {
    meta[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return true;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

}  // namespace fluidswarm::csv
