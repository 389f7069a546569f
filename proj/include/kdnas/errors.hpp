#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace kdnas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN / non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture, unknown activation, bad hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad user data: out-of-range token ids, empty corpora, states outside a space.
class InputError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition between library components.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A file another command should have produced (latency table, checkpoint).
class MissingArtifact : public IoError {
 public:
  using IoError::IoError;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at position " + std::to_string(position) + ")"), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class SearchExhausted : public Error {
 public:
  using Error::Error;
};

// Resuming a search whose persisted configuration differs from the current one.
class ConfigMismatch : public Error {
 public:
  ConfigMismatch(const std::string& what, std::string diff)
      : Error(what + "\n" + diff), diff_(std::move(diff)) {}

  const std::string& diff() const noexcept { return diff_; }

 private:
  std::string diff_;
};

// Raised when benchmarking would overlap with running candidate evaluations.
class MeasurementConflict : public Error {
 public:
  using Error::Error;
};

}  // namespace kdnas
