#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rntk {

// Error categories map one-to-one onto CLI exit codes (see tools/rntk_lab.cpp).

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class UnsupportedMode : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, std::int64_t step)
      : std::runtime_error(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace rntk
