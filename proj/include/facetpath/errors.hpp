#pragma once

#include <stdexcept>
#include <string>

namespace facetpath {

// Common base so callers can catch anything from this library in one clause.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent input files (nodes/edges/labels/features).
class IngestError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (ratios, temperatures, empty inputs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Tensor shape mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Numeric failure (non-finite values, degenerate batch).
class NumericsError : public Error {
 public:
  using Error::Error;
};

// Training cannot proceed (edgeless graph, NaN loss, empty split).
class TrainError : public Error {
 public:
  using Error::Error;
};

// Negative sampling exhausted its rejection budget.
class SamplingError : public Error {
 public:
  using Error::Error;
};

// Metric preconditions violated (empty input, single class).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace facetpath
