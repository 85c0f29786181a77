#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace koopman::csv {

/// Shortest text that parses back to the identical double (at most 17 significant digits).
std::string format(double value);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

/// Numeric CSV with one header line. Blank lines and lines starting with # are skipped.
Table read(const std::filesystem::path& path);

std::vector<std::string> split(const std::string& line, char sep = ',');

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace koopman::csv
