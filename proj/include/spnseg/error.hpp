#pragma once

#include <stdexcept>
#include <string>

namespace spnseg {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rasters whose dimensions do not agree, or an empty/zero-sized raster.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument violates a value precondition (non-finite weight, degenerate
/// target, unprojected affinities, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An iterative computation produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace spnseg
