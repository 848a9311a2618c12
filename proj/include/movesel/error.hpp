#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace movesel {

// Every failure raised by the library carries one of these kinds; the CLI
// maps them onto exit codes and reports the name verbatim.
enum class ErrorKind {
  ParseError,
  IoError,
  DomainError,
  NonFiniteAtInit,
  OutOfExtent,
  ExtentMismatch,
  DegenerateInput,
  DuplicateTimestamp,
  NonFiniteCoordinate,
  SeparationDetected,
  SingularDesign,
  MissingCovariate,
  MissingMovementContext,
  UnknownCovariate,
  TooFewSteps,
  ExtentExhausted,
  InvalidUpdatedKernel,
  InvalidObservation,
  AllRestartsFailed,
  NonStochasticInput,
  UsageError,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  // line == 0 means "no line information".
  Error(ErrorKind kind, const std::string& message, std::size_t line = 0);

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return to_string(kind_); }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorKind kind_;
  std::size_t line_;
};

}  // namespace movesel
