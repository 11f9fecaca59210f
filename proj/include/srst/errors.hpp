#pragma once

#include <stdexcept>
#include <string>

namespace srst {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/matrix shapes. Message names both shapes.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Caller violated a precondition (bad arguments, wrong mode, empty input).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered in data or gradients.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Missing key (speaker stats, vocabulary entry, checkpoint parameter).
class LookupError : public Error {
 public:
  explicit LookupError(const std::string& msg) : Error(msg) {}
};

}  // namespace srst
