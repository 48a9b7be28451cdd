#pragma once

#include <stdexcept>
#include <string>

namespace htmseq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two SDRs (or an SDR and a consumer) disagree on bit width.
class WidthMismatch : public Error {
 public:
  WidthMismatch(std::size_t expected, std::size_t actual)
      : Error("sdr width mismatch: expected " + std::to_string(expected) + ", got " +
              std::to_string(actual)) {}
};

// Invalid run configuration; `field` is a dotted path such as "tm.activation_threshold".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Bad input data: unparseable series, empty CSV, corrupted snapshot.
class DataError : public Error {
 public:
  using Error::Error;
};

class SnapshotError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace htmseq
