#pragma once

#include <stdexcept>
#include <string>

namespace msfa {

// All domain errors carry a short machine-parsable category used by the CLI
// as an exit prefix ("error:<category>: message").
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

class DimsError : public Error {
 public:
  explicit DimsError(const std::string& msg) : Error("dims", msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data", msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& msg) : Error("index", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

}  // namespace msfa
