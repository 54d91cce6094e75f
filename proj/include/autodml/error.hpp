#pragma once

#include <stdexcept>
#include <string>

namespace autodml {

// Base for all library failures. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed config, missing column, out-of-range argument.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A numerical routine could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace autodml
