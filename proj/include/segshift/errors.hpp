#pragma once

#include <stdexcept>
#include <string>

namespace segshift {

// Tensor layouts disagree (layer sizes, batch sizes, resolutions).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value lies outside its admissible range (mask outside [0,1], shift beyond delta).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid or inconsistent configuration; raised before any expensive work.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a NaN/Inf loss. `dump_path` points at the saved offending batch.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::string dump_path)
      : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const noexcept { return dump_path_; }

 private:
  std::string dump_path_;
};

}  // namespace segshift
