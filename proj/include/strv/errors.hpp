#pragma once

#include <stdexcept>
#include <string>

namespace strv {

// Base class of every error raised by the library. The CLI maps these to
// exit code 1 (domain error); usage errors are reported separately.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, bad index, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Non-finite input or output where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class EmptyRoiError : public Error {
 public:
  explicit EmptyRoiError(const std::string& roi)
      : Error("empty ROI mask: " + roi), roi_(roi) {}
  const std::string& roi() const { return roi_; }

 private:
  std::string roi_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class StratificationError : public Error {
 public:
  using Error::Error;
};

class DegenerateSupportError : public Error {
 public:
  using Error::Error;
};

class BudgetExceededError : public Error {
 public:
  BudgetExceededError(const std::string& what, unsigned long long count)
      : Error(what), count_(count) {}
  unsigned long long count() const { return count_; }

 private:
  unsigned long long count_;
};

}  // namespace strv
