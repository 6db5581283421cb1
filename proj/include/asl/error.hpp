#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace asl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values reached an update or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Inputs are mutually inconsistent (e.g. class count of a checkpoint vs a manifest).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A byte stream does not follow its container format.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A checkpoint could not be restored. `field()` names the part that failed.
class LoadError : public Error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, malformed, shape_mismatch };

  LoadError(Kind kind, std::string field, const std::string& what)
      : Error("checkpoint " + field + ": " + what), kind_(kind), field_(std::move(field)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  Kind kind_;
  std::string field_;
};

}  // namespace asl
