// SPDX-License-Identifier: Apache-2.0
//
// Region-routed attention mask over the concatenated sequence
// [text_0 | text_1 | ... | text_{N-1} | visual_0 .. visual_{V-1}].
//
// Routing rules:
//   sr3a          visual q -> every visual k, plus the text of each condition it belongs to.
//                 text_i q -> text_i, plus every visual k that belongs to condition i.
//   hard_regional as sr3a, but visual q -> visual k only when their memberships intersect.
//   dense         every pair allowed.
// The diagonal is always allowed.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storyweave/region.hpp"

namespace storyweave {

enum class MaskMode : std::uint8_t { Sr3a = 0, HardRegional = 1, Dense = 2 };

MaskMode parse_mask_mode(std::string_view text);  // "sr3a" | "hard" | "hard_regional" | "dense"
std::string_view to_string(MaskMode mode);

class SegmentLayout {
 public:
  SegmentLayout() = default;
  SegmentLayout(std::vector<int> segment_lengths, int visual_count);

  int condition_count() const { return static_cast<int>(lengths_.size()); }
  int segment_length(int i) const { return lengths_[static_cast<std::size_t>(i)]; }
  int segment_offset(int i) const { return offsets_[static_cast<std::size_t>(i)]; }
  int text_count() const { return offsets_.back(); }
  int visual_count() const { return visual_count_; }
  int visual_offset() const { return text_count(); }
  int total() const { return text_count() + visual_count_; }
  /// Condition owning text position `pos`, or -1 for visual positions.
  int segment_of(int pos) const;
  const std::vector<int>& segment_lengths() const { return lengths_; }

  bool operator==(const SegmentLayout&) const = default;

 private:
  std::vector<int> lengths_;
  std::vector<int> offsets_{0};  // prefix sums, size N + 1
  int visual_count_ = 0;
};

/// Row-major S x S bit matrix, one run of ceil(S/64) little-endian words per query row.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(SegmentLayout layout, MaskMode mode);

  const SegmentLayout& layout() const { return layout_; }
  MaskMode mode() const { return mode_; }
  int size() const { return layout_.total(); }
  int words_per_row() const { return words_per_row_; }

  /// Bounds-checked query; throws IndexOutOfRange.
  bool query(int q, int k) const;
  bool test(int q, int k) const {
    return (row(q)[static_cast<std::size_t>(k) >> 6] >> (static_cast<unsigned>(k) & 63U)) & 1U;
  }
  void set(int q, int k) { row_mut(q)[static_cast<std::size_t>(k) >> 6] |= std::uint64_t{1} << (static_cast<unsigned>(k) & 63U); }

  std::span<const std::uint64_t> row(int q) const {
    return {words_.data() + static_cast<std::size_t>(q) * static_cast<std::size_t>(words_per_row_),
            static_cast<std::size_t>(words_per_row_)};
  }
  std::span<const std::uint64_t> words() const { return words_; }
  std::size_t allowed_count() const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::span<std::uint64_t> row_mut(int q) {
    return {words_.data() + static_cast<std::size_t>(q) * static_cast<std::size_t>(words_per_row_),
            static_cast<std::size_t>(words_per_row_)};
  }

  SegmentLayout layout_;
  MaskMode mode_ = MaskMode::Dense;
  int words_per_row_ = 0;
  std::vector<std::uint64_t> words_;

  friend AttentionMask import_mask_bitset(std::string_view bytes, const SegmentLayout* layout);
};

AttentionMask build_attention_mask(const SegmentLayout& layout, const RegionMap& regions, MaskMode mode);

/// Convenience wrapper around AttentionMask::query.
bool mask_query(const AttentionMask& mask, int q, int k);

enum class MaskFormat { Pgm, BitsetBinary };

/// pgm: P5 S x S, 255 allowed / 0 masked.
/// bitset_binary: "SR3A", u32 S, u8 mode, then S rows of ceil(S/64) little-endian u64 words.
std::string export_mask(const AttentionMask& mask, MaskFormat format);

/// Inverse of the bitset_binary export. The binary carries no segment lengths, so
/// the layout is taken from `layout` when given, otherwise the mask is treated as
/// a single text-free visual block.
AttentionMask import_mask_bitset(std::string_view bytes, const SegmentLayout* layout = nullptr);

/// {"segment_lengths": [...], "visual_count": V}
std::string segment_layout_to_json(const SegmentLayout& layout);
SegmentLayout segment_layout_from_json(std::string_view text);

}  // namespace storyweave
