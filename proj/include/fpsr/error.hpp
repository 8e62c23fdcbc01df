#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fpsr {

enum class ErrorCode {
  IngestEmpty,
  IngestParse,
  DegreeZero,
  PartitionTooLarge,
  SvdNoConverge,
  ShapeError,
  AdmmDiverged,
  AssemblyMismatch,
  ModelVersionError,
  ModelCorrupt,
  EvalEmpty,
  OmegaUndefined,
  ModularityUndefined,
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IngestEmpty: return "IngestEmpty";
    case ErrorCode::IngestParse: return "IngestParse";
    case ErrorCode::DegreeZero: return "DegreeZero";
    case ErrorCode::PartitionTooLarge: return "PartitionTooLarge";
    case ErrorCode::SvdNoConverge: return "SvdNoConverge";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::AdmmDiverged: return "AdmmDiverged";
    case ErrorCode::AssemblyMismatch: return "AssemblyMismatch";
    case ErrorCode::ModelVersionError: return "ModelVersionError";
    case ErrorCode::ModelCorrupt: return "ModelCorrupt";
    case ErrorCode::EvalEmpty: return "EvalEmpty";
    case ErrorCode::OmegaUndefined: return "OmegaUndefined";
    case ErrorCode::ModularityUndefined: return "ModularityUndefined";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

/// Raised when the eigensolver exhausts its iteration budget.
class SvdNoConverge : public Error {
 public:
  SvdNoConverge(double best_residual, int iterations)
      : Error(ErrorCode::SvdNoConverge,
              "no convergence after " + std::to_string(iterations) +
                  " iterations (best relative residual " + std::to_string(best_residual) + ")"),
        best_residual_(best_residual) {}

  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace fpsr
