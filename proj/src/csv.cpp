#include "dimask/csv.hpp"

#include <charconv>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dimask/errors.hpp"

namespace dimask::csv {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::out_of_range("no column named " + name);
}

Table parse(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1) {
      t.header = split(line);
      if (line.empty()) throw ParseError("csv: empty header", n);
      continue;
    }
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size()) {
      throw ParseError("csv line " + std::to_string(n) + ": " + std::to_string(row.size()) + " fields, header has " +
                           std::to_string(t.header.size()),
                       n);
    }
    t.rows.push_back(std::move(row));
  }
  if (n == 0) throw ParseError("csv: no header", 0);
  return t;
}

double number(const std::string& cell) {
  if (cell == "NA") return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (r.ec != std::errc() || r.ptr != cell.data() + cell.size()) {
    throw std::invalid_argument("csv: '" + cell + "' is not a number");
  }
  return v;
}

}  // namespace dimask::csv
