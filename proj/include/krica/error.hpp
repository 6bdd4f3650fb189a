#pragma once

#include <stdexcept>
#include <string>

namespace krica {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or argument contract violated by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Operation not defined for the requested kernel / mode combination.
class Unsupported : public Error {
 public:
  using Error::Error;
};

/// Filesystem or format failure while reading/writing data.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace krica
