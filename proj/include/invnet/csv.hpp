#pragma once

#include <string>
#include <vector>

namespace invnet {

/// Shortest round-trip decimal, locale independent; "inf", "-inf", "nan"
/// for non-finite values.
std::string format_double(double v);

/// Comma-separated table with a header row and a trailing schema comment.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> cells);
  std::size_t rows() const { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace invnet
