#pragma once

#include <stdexcept>
#include <string>

namespace mnlab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A geometry query outside the regime where the closed forms hold.
class DomainError : public Error {
 public:
  using Error::Error;
};

class InvalidDimension : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

// data-io
class BadMagic : public Error {
 public:
  using Error::Error;
};

class Truncated : public Error {
 public:
  using Error::Error;
};

class CountMismatch : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

class ArchMismatch : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

}  // namespace mnlab
