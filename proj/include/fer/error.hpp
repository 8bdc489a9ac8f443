#pragma once

#include <stdexcept>
#include <string>

namespace fer {

/// Base of every error the library throws. `kind()` is a short stable tag the
/// CLI prints in its one-line error output.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

class ParseError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "parse"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class AlignmentError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "alignment"; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "training"; }
};

class CheckpointError : public Error {
 public:
  enum class Code { bad_magic, version_mismatch, truncated, length_mismatch, malformed };

  CheckpointError(Code code, const std::string& what) : Error(what), code_(code) {}

  Code code() const noexcept { return code_; }

  const char* kind() const noexcept override {
    switch (code_) {
      case Code::bad_magic: return "checkpoint-magic";
      case Code::version_mismatch: return "checkpoint-version";
      case Code::truncated: return "checkpoint-truncated";
      case Code::length_mismatch: return "checkpoint-length";
      case Code::malformed: return "checkpoint-malformed";
    }
    return "checkpoint";
  }

 private:
  Code code_;
};

}  // namespace fer
