#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ptqrel {

enum class ErrorKind {
  EmptyTensor,
  InvalidRange,
  ShapeMismatch,
  ZeroNorm,
  BinMismatch,
  AllZero,
  NonFinite,
  BadMagic,
  ShapeContractViolation,
  TruncatedPayload,
  IoFailure,
  UnknownSite,
  UnfoldablePattern,
  EmptyDataset,
  DivergedLoss,
  OutOfRange,
  IncompleteConfig,
  DegenerateRange,
  OverDraw,
  MissingClass,
  EmptySamples,
  InvalidArgument,
  TrialFailed,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::EmptyTensor: return "EmptyTensor";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ZeroNorm: return "ZeroNorm";
    case ErrorKind::BinMismatch: return "BinMismatch";
    case ErrorKind::AllZero: return "AllZero";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::ShapeContractViolation: return "ShapeContractViolation";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::UnknownSite: return "UnknownSite";
    case ErrorKind::UnfoldablePattern: return "UnfoldablePattern";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::IncompleteConfig: return "IncompleteConfig";
    case ErrorKind::DegenerateRange: return "DegenerateRange";
    case ErrorKind::OverDraw: return "OverDraw";
    case ErrorKind::MissingClass: return "MissingClass";
    case ErrorKind::EmptySamples: return "EmptySamples";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::TrialFailed: return "TrialFailed";
  }
  return "Unknown";
}

// Every failure in the library surfaces as this one exception type; callers
// branch on kind() rather than on a class hierarchy.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ptqrel
