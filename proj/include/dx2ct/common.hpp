#pragma once

#include <stdexcept>
#include <string>

namespace dx2ct {

// Invalid arguments, malformed configs, contract violations. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or diverging computations. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File and serialization failures. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_valid(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

inline void require_numeric(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

}  // namespace dx2ct
