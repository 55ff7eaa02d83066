#pragma once

#include <stdexcept>
#include <string>

namespace ctxbert {

// Base class for every error raised by the library. `kind()` is a short,
// stable token used for the CLI's machine-parsable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class OutOfVocabularyError : public Error {
 public:
  explicit OutOfVocabularyError(const std::string& message) : Error("out-of-vocabulary", message) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

}  // namespace ctxbert
