#pragma once

#include <string>
#include <vector>

namespace nsum {

/// Minimal CSV table: first row is the header.  Supports double-quoted
/// fields (embedded commas and doubled quotes); no multi-line fields.
struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const;  // -1 if absent
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// "" and "NA" are the accepted missing encodings in survey exports.
bool csv_cell_missing(const std::string& cell);

}  // namespace nsum
