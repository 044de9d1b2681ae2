#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dclr {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input row; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A check-in names a POI the catalog does not contain.
class ReferentialError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated precondition (shape mismatch, out-of-range index, empty list).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient; param() names the offending entry.
class NumericError : public Error {
 public:
  NumericError(std::string param, const std::string& what)
      : Error(what + " [" + param + "]"), param_(std::move(param)) {}
  const std::string& param() const noexcept { return param_; }

 private:
  std::string param_;
};

// A device expected a snapshot from a neighbor that never published one.
class ProtocolError : public Error {
 public:
  ProtocolError(std::string neighbor, const std::string& what)
      : Error(what), neighbor_(std::move(neighbor)) {}
  const std::string& neighbor() const noexcept { return neighbor_; }

 private:
  std::string neighbor_;
};

// Missing or mismatched pipeline artifact.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace dclr
