// SPDX-License-Identifier: Apache-2.0

#ifndef SPN_ERRORS_HPP
#define SPN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace spn {

/// Operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data (files, manifests, alignments).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or a violated call precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace spn

#endif  // SPN_ERRORS_HPP
