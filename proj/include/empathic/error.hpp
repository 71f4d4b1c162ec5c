#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace empathic {

enum class ErrorCode {
  connection_refused,
  handshake_timeout,
  broken_pipe,
  protocol_error,
  bind_failure,
  missing_section,
  invalid_template,
  empty_user_text,
  out_of_range,
  timeout,
  backend_error,
  malformed_response,
  script_exhausted,
  unknown_session,
  schema_violation,
  judge_output_unparseable,
  empty_dataset,
  invalid_argument,
  io_error,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::connection_refused: return "connection-refused";
    case ErrorCode::handshake_timeout: return "handshake-timeout";
    case ErrorCode::broken_pipe: return "broken-pipe";
    case ErrorCode::protocol_error: return "protocol-error";
    case ErrorCode::bind_failure: return "bind-failure";
    case ErrorCode::missing_section: return "missing-section";
    case ErrorCode::invalid_template: return "invalid-template";
    case ErrorCode::empty_user_text: return "empty-user-text";
    case ErrorCode::out_of_range: return "out-of-range";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::backend_error: return "backend-error";
    case ErrorCode::malformed_response: return "malformed-response";
    case ErrorCode::script_exhausted: return "script-exhausted";
    case ErrorCode::unknown_session: return "unknown-session";
    case ErrorCode::schema_violation: return "schema-violation";
    case ErrorCode::judge_output_unparseable: return "judge-output-unparseable";
    case ErrorCode::empty_dataset: return "empty-dataset";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown";
}

/// Every failure surfaced by the library. `code()` is stable and is what the
/// REST layer reports in its `error` field.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace empathic
