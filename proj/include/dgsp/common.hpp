#pragma once

#include <stdexcept>
#include <string>

namespace dgsp {

// Error hierarchy. Configuration problems (bad shapes wired at construction,
// mismatched dims) are ConfigError; bad runtime inputs are ShapeError/DataError;
// filesystem and decode problems are IoError.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error("data: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

struct PromptError : Error {
  explicit PromptError(const std::string& msg) : Error("prompt: " + msg) {}
};

}  // namespace dgsp
