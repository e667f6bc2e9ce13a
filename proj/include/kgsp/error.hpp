#pragma once

#include <stdexcept>
#include <string>

namespace kgsp {

// Bad data or a violated contract. CLI exit code 1.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable or unwritable. CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public DomainError {
 public:
  using DomainError::DomainError;
};

// NaN or Inf produced or consumed where finite values are required.
class NumericError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace kgsp
