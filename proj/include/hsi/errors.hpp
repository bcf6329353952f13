#pragma once

#include <stdexcept>
#include <string>

namespace hsi {

// Error taxonomy used across the library:
//   std::invalid_argument -- structurally bad inputs (shape/grid mismatch, bad config)
//   std::domain_error     -- evaluation outside a quantity's mathematical domain
//   hsi::numerical_error  -- an algorithm failed numerically (non-convergence,
//                            non-finite state); message carries diagnostics
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad command line or config file; maps to process exit code 1.
class usage_error : public std::runtime_error {
 public:
  explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hsi
