#pragma once

#include <stdexcept>
#include <string>

namespace fsdrive {

/// Failure category. The CLI maps each category to its own exit code.
enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  input_not_found,
  format,
  bad_magic,
  truncated,
  unsupported_version,
  divergence,
  io,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorKind::invalid_argument, what);
}

}  // namespace fsdrive
