#pragma once

#include <stdexcept>
#include <string>

namespace her {

enum class ErrorCode {
  invalid_input = 1,
  invalid_parameter,
  model_not_incremental,
  format_error,
  io_error,
  bootstrap_required,
  invalid_state,
  pool_exhausted,
  not_found,
  conflict,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace her
