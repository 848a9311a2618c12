#include "movesel/error.hpp"

namespace movesel {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NonFiniteAtInit: return "NonFiniteAtInit";
    case ErrorKind::OutOfExtent: return "OutOfExtent";
    case ErrorKind::ExtentMismatch: return "ExtentMismatch";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::DuplicateTimestamp: return "DuplicateTimestamp";
    case ErrorKind::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ErrorKind::SeparationDetected: return "SeparationDetected";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::MissingCovariate: return "MissingCovariate";
    case ErrorKind::MissingMovementContext: return "MissingMovementContext";
    case ErrorKind::UnknownCovariate: return "UnknownCovariate";
    case ErrorKind::TooFewSteps: return "TooFewSteps";
    case ErrorKind::ExtentExhausted: return "ExtentExhausted";
    case ErrorKind::InvalidUpdatedKernel: return "InvalidUpdatedKernel";
    case ErrorKind::InvalidObservation: return "InvalidObservation";
    case ErrorKind::AllRestartsFailed: return "AllRestartsFailed";
    case ErrorKind::NonStochasticInput: return "NonStochasticInput";
    case ErrorKind::UsageError: return "UsageError";
  }
  return "Error";
}

namespace {

std::string compose(ErrorKind kind, const std::string& message, std::size_t line) {
  std::string out(to_string(kind));
  if (line > 0) out += " (line " + std::to_string(line) + ")";
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& message, std::size_t line)
    : std::runtime_error(compose(kind, message, line)), kind_(kind), line_(line) {}

}  // namespace movesel
