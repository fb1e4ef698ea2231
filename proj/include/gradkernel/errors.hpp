#pragma once

#include <stdexcept>
#include <string>

namespace gradkernel {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of a scalar function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Requested derivative order above what Taylor4 carries.
class OrderError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NonDifferentiable : public Error {
 public:
  using Error::Error;
};

/// Node kind has no structured representation for the requested derivative order.
class UnsupportedNode : public Error {
 public:
  using Error::Error;
};

class NotPSD : public Error {
 public:
  using Error::Error;
};

class UnknownName : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : Error(message + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

inline void require_dim(bool ok, const char* what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace gradkernel
