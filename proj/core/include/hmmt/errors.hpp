#pragma once

#include <stdexcept>
#include <string>

namespace hmmt {

// Base for every error raised by the library. Subclasses name the failing
// contract so callers (and the CLI) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input layout that cannot be serialized (indivisible patches, bad segments).
class LayoutError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration: unknown names, non-positive sizes, bad flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated files (checkpoints, array files, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (non-scalar loss, exhausted iterators, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmmt
