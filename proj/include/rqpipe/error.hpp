#pragma once

#include <stdexcept>
#include <string>

namespace rqpipe {

// Base of every error the toolkit throws. Subclasses identify the failure
// category so callers (and the CLI) can react without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncationError : public Error { public: using Error::Error; };
class RangeError : public Error { public: using Error::Error; };
class DimensionError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class ParseError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

// An external tool exited nonzero. Carries the captured diagnostic output.
class ToolError : public Error {
 public:
  ToolError(const std::string& what, int exit_code, std::string output)
      : Error(what), exit_code_(exit_code), output_(std::move(output)) {}
  int exit_code() const { return exit_code_; }
  const std::string& output() const { return output_; }

 private:
  int exit_code_;
  std::string output_;
};

}  // namespace rqpipe
