#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace apm {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);
std::size_t parse_index(std::string_view text);

using CsvRow = std::vector<std::string>;

/// Minimal comma-separated reader (no quoting). First row is the header.
std::vector<CsvRow> read_csv(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace apm
