#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dimask::csv {

// Plain comma-separated text: no quoting, one header line, every row with
// the header's field count.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // std::out_of_range if absent
};

// Throws ParseError carrying the 1-based line of the first bad row.
Table parse(const std::string& text);

// "NA" reads as NaN.
double number(const std::string& cell);

}  // namespace dimask::csv
