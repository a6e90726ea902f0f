#pragma once

#include <stdexcept>
#include <string>

namespace aslp {

/// A numeric argument fell outside the domain of the operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Two maps (or parameter tensors) that must agree in shape do not.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An object was used in a state that does not allow the call.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// A file on disk could not be decoded.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A configuration value is missing or malformed.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aslp
