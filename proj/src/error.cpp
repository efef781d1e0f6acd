#include "vsr/error.hpp"

#include <sstream>

namespace vsr {

namespace {

std::string dimension_message(const std::string& op, const std::string& axis, long expected,
                              long actual) {
  std::ostringstream os;
  os << op << ": dimension mismatch on axis '" << axis << "' (expected " << expected << ", got "
     << actual << ")";
  return os.str();
}

std::string join_violations(const std::vector<std::string>& v) {
  std::string out = "invalid configuration:";
  for (const auto& s : v) out += "\n  - " + s;
  return out;
}

}  // namespace

DimensionError::DimensionError(std::string op, std::string axis, long expected, long actual)
    : Error(dimension_message(op, axis, expected, actual)),
      op_(std::move(op)),
      axis_(std::move(axis)),
      expected_(expected),
      actual_(actual) {}

ParseError::ParseError(std::string what, std::size_t offset)
    : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

ConfigError::ConfigError(std::vector<std::string> violations)
    : Error(join_violations(violations)), violations_(std::move(violations)) {}

ConfigError::ConfigError(std::string violation)
    : ConfigError(std::vector<std::string>{std::move(violation)}) {}

}  // namespace vsr
