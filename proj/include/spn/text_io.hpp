// SPDX-License-Identifier: Apache-2.0
//
// Small helpers for the ASCII file formats: comma/tab separated rows,
// '.' radix, newline-terminated. Numbers are written with 17 significant
// digits so that every double survives a write/read cycle bit-exactly.

#ifndef SPN_TEXT_IO_HPP
#define SPN_TEXT_IO_HPP

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spn/matrix.hpp"

namespace spn {

std::vector<std::string> split(std::string_view line, char delimiter);
std::string trim(std::string_view text);
/// Full-string decimal parse; `context` names the source in the error.
double parse_double(std::string_view text, const std::string& context);
std::string format_double(double value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Numeric CSV with a fixed column count. `skip_header` drops the first line.
Matrix read_numeric_csv(const std::filesystem::path& path, std::size_t expected_cols, bool skip_header);
void write_numeric_csv(const std::filesystem::path& path, const Matrix& m, const std::string& header = {});

}  // namespace spn

#endif  // SPN_TEXT_IO_HPP
