#pragma once

#include <stdexcept>
#include <string>

namespace flexfl {

/// Raised when a training step produces a NaN or infinite loss.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the gamma sweep cannot bring a plan within tolerance of its target.
class UnreachableTarget : public std::runtime_error {
 public:
  UnreachableTarget(std::size_t level, const std::string& what)
      : std::runtime_error(what), level_(level) {}
  std::size_t level() const noexcept { return level_; }

 private:
  std::size_t level_;
};

/// Invalid configuration value. `field` holds the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error("config field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace flexfl
