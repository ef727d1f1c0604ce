// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace storyweave {

enum class ErrorCode {
  // plan text
  MissingScene,
  MissingNarration,
  MalformedHeader,
  MissingBackground,
  MissingFrame,
  MalformedEntry,
  MalformedBBox,
  InvalidFrameCount,
  // rasterization / masks
  GridMismatch,
  LayoutMismatch,
  IndexOutOfRange,
  // numerics
  DimensionMismatch,
  TimestepOutOfRange,
  ShapeMismatch,
  MaskMismatch,
  AnchorOutOfRange,
  EmptyTrainingSet,
  // retrieval
  EmptyCorpus,
  EmptyMotion,
  ScorerUnavailable,
  // planner client
  MissingSlot,
  EmptySlot,
  BackendError,
  ExhaustedRetries,
  // artifact I/O
  Io,
  Format,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for every contract violation in the library.
/// The code identifies the failure class; the message names the offending
/// line, index or file.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace storyweave
