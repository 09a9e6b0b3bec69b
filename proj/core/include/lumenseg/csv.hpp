#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lumenseg {

// Fixed ten-significant-digit rendering so repeated runs print identical text.
std::string format_number(double v);

// Comma-separated table with a fixed header; fields never contain commas.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace lumenseg
