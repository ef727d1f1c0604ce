// SPDX-License-Identifier: Apache-2.0

#include "storyweave/error.hpp"

namespace storyweave {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingScene: return "MissingScene";
    case ErrorCode::MissingNarration: return "MissingNarration";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::MissingBackground: return "MissingBackground";
    case ErrorCode::MissingFrame: return "MissingFrame";
    case ErrorCode::MalformedEntry: return "MalformedEntry";
    case ErrorCode::MalformedBBox: return "MalformedBBox";
    case ErrorCode::InvalidFrameCount: return "InvalidFrameCount";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TimestepOutOfRange: return "TimestepOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MaskMismatch: return "MaskMismatch";
    case ErrorCode::AnchorOutOfRange: return "AnchorOutOfRange";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptyMotion: return "EmptyMotion";
    case ErrorCode::ScorerUnavailable: return "ScorerUnavailable";
    case ErrorCode::MissingSlot: return "MissingSlot";
    case ErrorCode::EmptySlot: return "EmptySlot";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::ExhaustedRetries: return "ExhaustedRetries";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

}  // namespace storyweave
