#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmat {

// All library failures derive from Error so callers can catch once.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain of an operation (e.g. log of a nonpositive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or otherwise unusable floating-point input.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// DeepFool hit a vanishing gradient difference.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

// Grading produced an empty grade set or was handed no data.
class DegeneratePartitionError : public Error {
 public:
  using Error::Error;
};

// Training loss became NaN/inf.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, std::size_t batch)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

// Invalid run configuration; field() is a JSON-pointer-like path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace mmat
