#pragma once

#include <stdexcept>
#include <string>

namespace pycat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis incompatibility.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated (non-scalar loss, empty set, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint could not be loaded (bad magic, version, truncation, missing names).
class LoadError : public Error {
 public:
  using Error::Error;
};

// A loss or parameter became non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pycat
