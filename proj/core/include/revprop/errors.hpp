#pragma once

#include <stdexcept>
#include <string>

namespace revprop {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor dimensions do not satisfy an operation's requirements.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

/// A cache or gradient store was used with the wrong producer.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what) {}
};

/// Invalid configuration (file, flag, or programmatic).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// A memory budget cannot be met even at the smallest batch.
class BudgetError : public Error {
 public:
  explicit BudgetError(const std::string& what) : Error(what) {}
};

/// A pipeline lane failed; the training step was aborted.
class SchedulerError : public Error {
 public:
  explicit SchedulerError(const std::string& what) : Error(what) {}
};

/// Ledger accounting went negative: an alloc/free pairing bug.
class AccountingError : public Error {
 public:
  explicit AccountingError(const std::string& what) : Error(what) {}
};

}  // namespace revprop
