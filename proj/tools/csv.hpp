#pragma once

#include "heavytail/core.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace heavytail::cli {

/// Malformed input; the message carries source:line.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;  ///< empty when the file had none
  Matrix values;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(trim(f));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& x) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  x = std::strtod(s.c_str(), &end);
  // ERANGE also flags subnormal results; only overflow is rejected.
  return end == s.c_str() + s.size() && !(errno == ERANGE && std::isinf(x));
}

}  // namespace detail

/// Comma-separated numbers, one observation per line. A first line with a
/// non-numeric field and no empty field is taken as a header. Blank lines are skipped.
inline CsvTable read_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  long width = -1;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line);
    std::vector<double> row(fields.size());
    long bad = -1;
    for (std::size_t j = 0; j < fields.size(); ++j)
      if (!detail::parse_double(fields[j], row[j]) && bad < 0) bad = static_cast<long>(j);
    const bool named = std::none_of(fields.begin(), fields.end(), [](const std::string& f) { return f.empty(); });
    if (first && bad >= 0 && named) {
      t.header = fields;
      width = static_cast<long>(fields.size());
      first = false;
      continue;
    }
    first = false;
    if (bad >= 0)
      throw InputError(source + ":" + std::to_string(lineno) + ": field " + std::to_string(bad + 1) +
                       " is not a number: '" + fields[bad] + "'");
    if (width < 0) width = static_cast<long>(row.size());
    if (static_cast<long>(row.size()) != width)
      throw InputError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                       " fields, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(source + ": no data rows");
  t.values.resize(static_cast<long>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (long j = 0; j < width; ++j) t.values(static_cast<long>(i), j) = rows[i][j];
  return t;
}

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_csv(std::ostream& out, const Matrix& values, const std::vector<std::string>& header = {}) {
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << '\n';
  }
  for (long i = 0; i < values.rows(); ++i) {
    for (long j = 0; j < values.cols(); ++j) out << (j ? "," : "") << format_double(values(i, j));
    out << '\n';
  }
}

}  // namespace heavytail::cli
