#pragma once

#include <stdexcept>
#include <string>

namespace slotner {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed user input: corpus lines, config fields, label names, vector files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Bad magic, truncated payload, unparseable header.
class CorruptCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Tensor directory does not match the variant flags stored in the header.
class CheckpointInventoryError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace slotner
