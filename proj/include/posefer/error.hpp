#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posefer {

enum class ErrorCode {
  // shape
  DegenerateShape,
  ShapeSizeMismatch,
  InvalidPermutation,
  InvalidShape,
  // posecluster / pca
  InsufficientSamples,
  DimensionMismatch,
  NotEnoughDistinctValues,
  EmptyGroup,
  // features
  ImageTooSmall,
  PointOutOfImage,
  RingOutOfImage,
  PatchOutOfImage,
  RegionOutOfImage,
  WrongPointCount,
  // classify
  SingleClassData,
  EmptyClass,
  EmptyMatrix,
  // fusionnet
  ShapeMismatch,
  LabelOutOfRange,
  TraceMismatch,
  // harness
  ParseError,
  PointCountMismatch,
  UnknownLabel,
  TooFewGroups,
  IoError,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Coarse category used by the CLI to pick an exit code.
enum class ErrorCategory { Data, Numeric, Usage };
ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace posefer
