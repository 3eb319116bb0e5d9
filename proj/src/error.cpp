#include "rsv/error.hpp"

namespace rsv {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::InfeasibleSplit: return "InfeasibleSplit";
    case ErrorCode::ZeroCount: return "ZeroCount";
    case ErrorCode::EmptyTraining: return "EmptyTraining";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::IrrelevantRSV: return "IrrelevantRSV";
    case ErrorCode::DegenerateBootstrap: return "DegenerateBootstrap";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::OutOfSupport: return "OutOfSupport";
    case ErrorCode::WeakInstrument: return "WeakInstrument";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::SupportTooLarge: return "SupportTooLarge";
    case ErrorCode::InsufficientCell: return "InsufficientCell";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroCount:
    case ErrorCode::EmptyTraining:
    case ErrorCode::SingularDesign:
    case ErrorCode::IrrelevantRSV:
    case ErrorCode::DegenerateBootstrap:
    case ErrorCode::WeakInstrument:
    case ErrorCode::InfeasibleSplit:
      return ErrorClass::Identification;
    default:
      return ErrorClass::Data;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code), message_(message) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace rsv
