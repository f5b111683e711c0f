#pragma once

#include <stdexcept>
#include <string>

namespace icpo {

// Error taxonomy used across the project. Everything is an exception rooted
// at Error so the CLI can turn any failure into a message plus nonzero exit.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent configuration (unknown keys, bad values, empty rule family).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

// A demonstration bank cannot satisfy a sampling request.
class BankExhaustedError : public Error {
 public:
  explicit BankExhaustedError(const std::string& what) : Error("bank exhausted: " + what) {}
};

// A token sequence does not fit inside the policy's maximum context.
class ContextOverflowError : public Error {
 public:
  explicit ContextOverflowError(const std::string& what) : Error("context overflow: " + what) {}
};

// Non-finite values or other numeric breakdowns.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical error: " + what) {}
};

// Wrong collection sizes (empty batches, short groups).
class SizeError : public Error {
 public:
  explicit SizeError(const std::string& what) : Error("size error: " + what) {}
};

// File and serialization failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

// Warm start finished without reaching the required in-context margin.
class WarmStartFailedError : public Error {
 public:
  explicit WarmStartFailedError(const std::string& what) : Error("warm start failed: " + what) {}
};

}  // namespace icpo
