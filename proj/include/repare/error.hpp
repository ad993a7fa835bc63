#pragma once

#include <chrono>
#include <stdexcept>
#include <string>

namespace repare {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A dataset or config file could not be read or is ill-formed.
class LoadError : public Error {
 public:
  LoadError(std::string file, const std::string& what)
      : Error(file + ": " + what), file_(std::move(file)) {}
  const std::string& file() const noexcept { return file_; }

 private:
  std::string file_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// The backend cannot perform the requested operation (no logprobs, no
// teacher forcing, no label probabilities).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Network or server failure. Retrying the same request may succeed.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, std::chrono::milliseconds retry_after,
                 int attempts = 1)
      : Error(what), retry_after_(retry_after), attempts_(attempts) {}
  std::chrono::milliseconds retry_after() const noexcept { return retry_after_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::chrono::milliseconds retry_after_;
  int attempts_;
};

// A pipeline stage failed; the message carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace repare
