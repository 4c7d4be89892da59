#pragma once

#include <stdexcept>
#include <string>

namespace taco {

// Error taxonomy used across the project. The CLI maps ConfigError and
// DataError to exit code 1, everything else to 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

#define TACO_CHECK(cond, exc, msg)        \
  do {                                    \
    if (!(cond)) throw exc(msg);          \
  } while (0)

}  // namespace taco
