#pragma once

#include <stdexcept>
#include <string>

namespace splitee {

/// Base for every error raised by the library.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not conform.
class dimension_error : public error {
public:
  using error::error;
};

/// Invalid configuration value (out-of-range layer, bad class count, ...).
class config_error : public error {
public:
  using error::error;
};

/// Malformed file contents.
class format_error : public error {
public:
  using error::error;
};

/// A file could not be opened, read or written.
class io_error : public error {
public:
  using error::error;
};

/// A caller skipped a required step, e.g. stepping an optimizer without grads.
class protocol_error : public error {
public:
  using error::error;
};

/// An input violates a documented precondition.
class contract_error : public error {
public:
  using error::error;
};

/// Internal structure mismatch, e.g. parameter paths that do not align.
class invariant_error : public error {
public:
  using error::error;
};

/// NaN or Inf reached a value that must stay finite.
class numeric_error : public error {
public:
  using error::error;
};

} // namespace splitee
