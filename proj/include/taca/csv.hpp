#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace taca {

/// Shortest round-trip decimal form; independent of the C locale.
std::string format_number(double value);
std::string format_number(long long value);
double parse_number(const std::string& text);

/// Comma-separated writer; fields are written verbatim (no quoting needed for
/// the numeric/identifier content this library produces).
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& fields);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace taca
