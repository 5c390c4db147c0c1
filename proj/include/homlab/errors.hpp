#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace homlab {

/// Argument outside the mathematical domain of an operation (exit code 4 at the CLI).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bracket endpoints do not straddle the requested value.
class RootNotBracketed : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Requested numerical accuracy cannot be met with the given settings.
class AccuracyError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Malformed input data. Carries the byte offset of the offending item and,
/// for record-oriented formats, the record index.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset,
              std::optional<std::uint64_t> record = std::nullopt)
      : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) +
                           (record ? ", record " + std::to_string(*record) : std::string{}) + ")"),
        byte_offset_(byte_offset),
        record_(record) {}

  std::uint64_t byte_offset() const noexcept { return byte_offset_; }
  std::optional<std::uint64_t> record() const noexcept { return record_; }

 private:
  std::uint64_t byte_offset_;
  std::optional<std::uint64_t> record_;
};

/// Invalid configuration value; `path()` names the offending field, e.g. `detector.efficiency`.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Caller violated a documented precondition (unsorted input, unknown channel, ...).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A model produced a non-finite value during fitting.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace homlab
