#pragma once

#include <stdexcept>
#include <string>

namespace slicerec {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or volume shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument outside its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// API misuse (e.g. backward on a non-scalar).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class StatisticsError : public Error {
 public:
  using Error::Error;
};

class LossError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class RecoveryError : public Error {
 public:
  using Error::Error;
};

class DictionaryError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable files (volume files, checkpoints, CSV).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace slicerec
