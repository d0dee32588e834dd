#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fssl {

enum class ErrorKind {
  ZeroNorm,
  DimMismatch,
  TooFewPoints,
  CacheMismatch,
  EmptyQueue,
  NonPositiveTemperature,
  NoSelectedPositives,
  EmptyPositives,
  MuOutOfRange,
  InsufficientQueue,
  DegenerateGeodesic,
  IndexOutOfRange,
  InsufficientTargetSamples,
  LayoutMismatch,
  SingleClient,
  EmptyUpdateSet,
  TooFewClients,
  AllZeroTrust,
  ClassTooSmall,
  SingleClass,
  EmptyTestSet,
  NoEligibleSamples,
  DimTooSmall,
  MalformedRecord,
  LabelOutOfRange,
  ConfigInvalid,
  MissingMetrics,
  IoError,
  BadCheckpoint,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type; `kind()` identifies
// the failure class so callers and tests never have to parse messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fssl
