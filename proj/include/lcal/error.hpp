#pragma once

#include <stdexcept>
#include <string>

namespace lcal {

enum class Err {
  MagicMismatch,
  TruncatedFile,
  LabelOutOfRange,
  NonFiniteValue,
  IoFailure,
  RejectedEmptyDataset,
  FractionSumInvalid,
  ShapeMismatch,
  DimensionMismatch,
  NonFiniteInput,
  EmptyInput,
  InvalidBracket,
  DegenerateCovariance,
  NoNeighbors,
  AllBinsEmpty,
  InvalidDelta,
  NoRetainedBins,
  ClassCountMismatch,
  DegenerateClass,
  EpsilonTooLarge,
  KTooLarge,
  SpecInvalid,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::MagicMismatch: return "MagicMismatch";
    case Err::TruncatedFile: return "TruncatedFile";
    case Err::LabelOutOfRange: return "LabelOutOfRange";
    case Err::NonFiniteValue: return "NonFiniteValue";
    case Err::IoFailure: return "IoFailure";
    case Err::RejectedEmptyDataset: return "RejectedEmptyDataset";
    case Err::FractionSumInvalid: return "FractionSumInvalid";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::DimensionMismatch: return "DimensionMismatch";
    case Err::NonFiniteInput: return "NonFiniteInput";
    case Err::EmptyInput: return "EmptyInput";
    case Err::InvalidBracket: return "InvalidBracket";
    case Err::DegenerateCovariance: return "DegenerateCovariance";
    case Err::NoNeighbors: return "NoNeighbors";
    case Err::AllBinsEmpty: return "AllBinsEmpty";
    case Err::InvalidDelta: return "InvalidDelta";
    case Err::NoRetainedBins: return "NoRetainedBins";
    case Err::ClassCountMismatch: return "ClassCountMismatch";
    case Err::DegenerateClass: return "DegenerateClass";
    case Err::EpsilonTooLarge: return "EpsilonTooLarge";
    case Err::KTooLarge: return "KTooLarge";
    case Err::SpecInvalid: return "SpecInvalid";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& msg)
      : std::runtime_error(std::string(err_name(kind)) + ": " + msg), kind_(kind) {}
  Err kind() const { return kind_; }

 private:
  Err kind_;
};

}  // namespace lcal
