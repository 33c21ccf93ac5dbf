#pragma once

#include <stdexcept>
#include <string>

namespace marcel {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyEnsemble : Error {
  explicit EmptyEnsemble(const std::string& msg = "ensemble is empty") : Error(msg) {}
};

struct InvalidEnergy : Error {
  explicit InvalidEnergy(const std::string& msg = "non-finite energy") : Error(msg) {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& msg)
      : Error("line " + std::to_string(line) + ": " + msg), line_number(line) {}
  explicit ParseError(const std::string& msg) : Error(msg), line_number(0) {}
  std::size_t line_number;
};

struct MissingProperty : Error {
  explicit MissingProperty(const std::string& msg) : Error(msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

struct NonFiniteGradient : Error {
  explicit NonFiniteGradient(const std::string& msg = "non-finite gradient") : Error(msg) {}
};

struct DatasetTooSmall : Error {
  explicit DatasetTooSmall(const std::string& msg) : Error(msg) {}
};

}  // namespace marcel
