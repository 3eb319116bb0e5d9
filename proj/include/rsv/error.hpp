#pragma once

#include <stdexcept>
#include <string>

namespace rsv {

enum class ErrorCode {
  MalformedRow,
  SchemaViolation,
  EmptySample,
  InfeasibleSplit,
  ZeroCount,
  EmptyTraining,
  DimMismatch,
  SingularDesign,
  IrrelevantRSV,
  DegenerateBootstrap,
  Unsupported,
  OutOfSupport,
  WeakInstrument,
  InvalidSpec,
  SupportTooLarge,
  InsufficientCell,
  InvalidArgument,
};

// Data errors map to CLI exit code 2, identification errors to 3.
enum class ErrorClass { Data, Identification };

const char* error_name(ErrorCode code);
ErrorClass error_class(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }
  const char* name() const { return error_name(code_); }
  const std::string& message() const { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace rsv
