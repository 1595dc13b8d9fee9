#pragma once

#include <stdexcept>
#include <string>

namespace recon_ood {

// Tensor shapes that do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Arguments outside an operation's domain (bad class id, bad schedule range).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A precondition on call order or state was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::string path)
      : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage was invoked before the stage that produces its inputs.
class MissingStageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training finished but missed its quality floor.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, double measured, double floor)
      : std::runtime_error(what), measured_(measured), floor_(floor) {}
  double measured() const noexcept { return measured_; }
  double floor() const noexcept { return floor_; }

 private:
  double measured_;
  double floor_;
};

}  // namespace recon_ood
