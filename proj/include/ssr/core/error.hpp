#pragma once

#include <stdexcept>
#include <string>

namespace ssr {

// Stable error codes; the CLI maps these to process exit codes.
enum class Errc : int {
  io_missing_file = 10,
  io_unsupported_format = 11,
  io_unwritable = 12,
  tnsr_bad_magic = 13,
  tnsr_version_mismatch = 14,
  tnsr_truncated = 15,
  tnsr_bad_header = 16,
  invalid_argument = 17,
  shape_mismatch = 18,
  numeric_error = 19,
  subprocess_failed = 20,
  missing_checkpoint = 21,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace ssr
