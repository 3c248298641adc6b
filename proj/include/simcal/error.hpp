#pragma once

#include <stdexcept>
#include <string>

namespace simcal {

enum class ErrorKind {
  InvalidInput,
  RankDeficient,
  Separation,
  NonConvergence,
  Overflow,
  DegenerateSigma,
  DomainViolation,
  SimulationFailed,
  BracketFailure,
  TooFewSamples,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::Separation: return "Separation";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::Overflow: return "Overflow";
    case ErrorKind::DegenerateSigma: return "DegenerateSigma";
    case ErrorKind::DomainViolation: return "DomainViolation";
    case ErrorKind::SimulationFailed: return "SimulationFailed";
    case ErrorKind::BracketFailure: return "BracketFailure";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
  }
  return "Unknown";
}

// Every failure surfaced by the library. InvalidInput and TooFewSamples are
// caller errors; the rest are numerical.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  bool is_input_error() const noexcept {
    return kind_ == ErrorKind::InvalidInput || kind_ == ErrorKind::TooFewSamples;
  }

 private:
  ErrorKind kind_;
};

// Raised by the Monte Carlo loop; remembers which replicate failed.
class SimulationError : public Error {
 public:
  SimulationError(long replicate, const std::string& cause)
      : Error(ErrorKind::SimulationFailed,
              "replicate " + std::to_string(replicate) + ": " + cause),
        replicate_(replicate) {}

  long replicate() const noexcept { return replicate_; }

 private:
  long replicate_;
};

}  // namespace simcal
