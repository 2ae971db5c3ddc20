// SPDX-License-Identifier: Apache-2.0

#include "spn/text_io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spn/errors.hpp"

namespace spn {

std::vector<std::string> split(std::string_view line, char delimiter) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

double parse_double(std::string_view text, const std::string& context) {
  const std::string s = trim(text);
  if (s.empty()) throw DataError(context + ": empty numeric field");
  char* end = nullptr;
  errno = 0;
  const double value = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw DataError(context + ": cannot parse '" + s + "' as a number");
  }
  return value;
}

std::string format_double(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Matrix read_numeric_csv(const std::filesystem::path& path, std::size_t expected_cols, bool skip_header) {
  std::istringstream in(read_text_file(path));
  Matrix m;
  m.cols = expected_cols;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_header && line_no == 1) continue;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    if (fields.size() != expected_cols) {
      throw DataError(where + ": expected " + std::to_string(expected_cols) + " columns, got " +
                      std::to_string(fields.size()));
    }
    for (const std::string& field : fields) m.data.push_back(parse_double(field, where));
    ++m.rows;
  }
  return m;
}

void write_numeric_csv(const std::filesystem::path& path, const Matrix& m, const std::string& header) {
  std::string out;
  if (!header.empty()) out += header + "\n";
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace spn
