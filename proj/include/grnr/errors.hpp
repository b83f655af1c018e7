#pragma once

#include <stdexcept>
#include <string>

namespace grnr {

// Base of everything the library throws. Validation errors are caller
// mistakes (bad input, bad config); runtime errors are failures while doing
// otherwise valid work. The CLI maps them to exit codes 1 and 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class InvalidPolygon : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegeneratePolygon : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UndefinedMetric : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InputMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InvalidInput : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IntegrityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class PipelineError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class TransportError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class DivergenceError : public RuntimeFailure {
 public:
  DivergenceError(int epoch, int step, const std::string& what)
      : RuntimeFailure(what), epoch_(epoch), step_(step) {}
  int epoch() const { return epoch_; }
  int step() const { return step_; }

 private:
  int epoch_;
  int step_;
};

}  // namespace grnr
