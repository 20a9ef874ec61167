// SPDX-License-Identifier: Apache-2.0
//
// Error types shared by every module. Validation errors signal bad inputs or
// configuration; numeric errors signal a computation that could not produce a
// finite or converged result; format errors signal malformed files.

#ifndef MIE_ERRORS_HPP
#define MIE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mie {

class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mie

#endif  // MIE_ERRORS_HPP
