#pragma once

#include <stdexcept>
#include <string>

namespace birdie {

// Raised for contract violations in user-supplied data (bad lengths, NaNs,
// unknown names). Callers at the CLI boundary map it to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace birdie
