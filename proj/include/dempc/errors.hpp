#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dempc {

/// Shape or schema mismatch between objects that must agree (layer chaining,
/// dataset channels, gradient congruence, missing inputs).
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or infinity appeared where only finite values are allowed.
/// `where` names the layer or time step that produced it.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t where = -1)
      : std::runtime_error(what), where_(where) {}
  std::ptrdiff_t where() const noexcept { return where_; }

 private:
  std::ptrdiff_t where_;
};

/// Argument outside the operation's domain (empty dataset, bad fraction sum,
/// out-of-range time step).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// File or parse problem.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dempc
