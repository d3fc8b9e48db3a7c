#pragma once

#include <stdexcept>
#include <string>

namespace aifa {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A numerical routine (quadrature, root finding, sampling) failed to
// reach its tolerance or produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Valid request that this library does not implement for the given inputs.
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace aifa
