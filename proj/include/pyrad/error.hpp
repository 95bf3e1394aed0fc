#pragma once

#include <stdexcept>
#include <string>

namespace pyrad {

// Failure classes map 1:1 onto CLI exit codes, see cli.hpp.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: unknown block id, inconsistent weights, fingerprint mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid call: empty batch, zero epochs, bad fractions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Tensor shape disagreement between operands or against the architecture input.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Weights archive problems: missing tensor, shape mismatch, corrupt container.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Dataset problems: unknown layout, missing mask, mask/image dimension clash.
class DataError : public Error {
 public:
  using Error::Error;
};

// Training failures: divergence, pretraining accuracy below floor.
class TrainError : public Error {
 public:
  using Error::Error;
};

// Metric undefined on the given inputs (single-class labels, no components).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures while writing artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pyrad
