#pragma once

#include <stdexcept>
#include <string>

namespace invnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameter or structural configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A linear system that must be solved is singular or numerically rank deficient.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver's objective blew up.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, std::size_t epoch)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

/// File could not be read or written, or its content is malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace invnet
