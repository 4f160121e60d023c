#pragma once

#include <stdexcept>
#include <string>

namespace dimask {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

class IndexError : public std::out_of_range {
 public:
  explicit IndexError(const std::string& what) : std::out_of_range(what) {}
};

// Misuse of the autodiff graph (non-scalar loss, consumed graph, ...).
class GraphError : public std::logic_error {
 public:
  explicit GraphError(const std::string& what) : std::logic_error(what) {}
};

// Invalid configuration values or combinations. The CLI maps this to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed input file. Carries the byte offset (binary) or line (text).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

}  // namespace dimask
