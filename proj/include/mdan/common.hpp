#pragma once

#include <stdexcept>
#include <string>

namespace mdan {

// Rejected inputs: bad shapes, malformed files, unresolvable configuration.
// The CLI maps this to exit code 2.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failures: training divergence, degenerate curves.
// The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mdan
