#pragma once

#include <stdexcept>
#include <string>

namespace snn_inekf {

// Exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kInvalidInput = 2,
  kIo = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kInvalidInput; }
};

// Bad arguments, bad shapes, out-of-range values, unsorted timestamps.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Carries the file and 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

// Inputs that are individually well formed but do not fit together
// (missing files, count mismatches, absent sequences).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or config whose format tag, version or shapes disagree.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

}  // namespace snn_inekf
