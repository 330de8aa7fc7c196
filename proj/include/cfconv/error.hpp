#pragma once

#include <stdexcept>
#include <string>

namespace cfconv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable dataset files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradients during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfconv
