#include "lumenseg/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lumenseg/error.hpp"

namespace lumenseg {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0.0) return "0";  // folds -0 into 0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) {
    throw DimensionError("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                         std::to_string(header_.size()));
  }
  for (const auto& c : cells) {
    if (c.find_first_of(",\n\"") != std::string::npos) throw FormatError("CSV cell '" + c + "' needs quoting");
  }
  rows_.push_back(std::move(cells));
  return *this;
}

std::string CsvTable::str() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      s += cells[i];
    }
    return s + '\n';
  };
  std::string out = line(header_);
  for (const auto& r : rows_) out += line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << str();
}

}  // namespace lumenseg
