#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ivf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input or a violated record invariant. `row` is the 1-based data
// row (header excluded) when the problem is tied to one.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, std::optional<std::size_t> row = std::nullopt)
      : Error(row ? what + " (row " + std::to_string(*row) + ")" : what), row_(row) {}
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  std::optional<std::size_t> row_;
};

// Non-finite log density, clamp activation during inference, failed factorization.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, std::optional<std::size_t> unit = std::nullopt)
      : Error(unit ? what + " (unit " + std::to_string(*unit) + ")" : what), unit_(unit) {}
  std::optional<std::size_t> unit() const noexcept { return unit_; }

 private:
  std::optional<std::size_t> unit_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ivf
