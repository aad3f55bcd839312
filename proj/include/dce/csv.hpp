#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dce::csv {

// A parsed CSV file. Rows are guaranteed to have the header's width.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // 1-based source line of each row

  int column(std::string_view name) const;  // -1 when absent
};

// Parses RFC-4180-ish CSV (double-quoted fields, "" escapes). Blank lines
// are skipped. Throws FormatError naming the source and line on ragged rows.
Table read(std::istream& in, std::string_view source = "<csv>");
Table read_file(const std::filesystem::path& path);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

// Shortest representation that round-trips.
std::string format_number(double value);

double parse_double(std::string_view text, std::string_view source, int line);
long long parse_int(std::string_view text, std::string_view source, int line);

std::string trim(std::string_view text);

}  // namespace dce::csv
