#include "posefer/error.hpp"

namespace posefer {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateShape: return "DegenerateShape";
    case ErrorCode::ShapeSizeMismatch: return "ShapeSizeMismatch";
    case ErrorCode::InvalidPermutation: return "InvalidPermutation";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotEnoughDistinctValues: return "NotEnoughDistinctValues";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::PointOutOfImage: return "PointOutOfImage";
    case ErrorCode::RingOutOfImage: return "RingOutOfImage";
    case ErrorCode::PatchOutOfImage: return "PatchOutOfImage";
    case ErrorCode::RegionOutOfImage: return "RegionOutOfImage";
    case ErrorCode::WrongPointCount: return "WrongPointCount";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::TraceMismatch: return "TraceMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::PointCountMismatch: return "PointCountMismatch";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateShape:
    case ErrorCode::InsufficientSamples:
    case ErrorCode::NotEnoughDistinctValues:
    case ErrorCode::SingleClassData:
    case ErrorCode::EmptyMatrix:
    case ErrorCode::TraceMismatch:
      return ErrorCategory::Numeric;
    case ErrorCode::InvalidConfig:
      return ErrorCategory::Usage;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace posefer
