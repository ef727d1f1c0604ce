// SPDX-License-Identifier: Apache-2.0

#include "storyweave/attention_mask.hpp"

#include <algorithm>
#include <bit>

#include <json.hpp>

#include "binary_io.hpp"
#include "storyweave/error.hpp"

namespace storyweave {

MaskMode parse_mask_mode(std::string_view text) {
  if (text == "sr3a") return MaskMode::Sr3a;
  if (text == "hard" || text == "hard_regional") return MaskMode::HardRegional;
  if (text == "dense") return MaskMode::Dense;
  throw Error(ErrorCode::Format, "unknown mask mode \"" + std::string(text) + "\"");
}

std::string_view to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::Sr3a: return "sr3a";
    case MaskMode::HardRegional: return "hard_regional";
    case MaskMode::Dense: return "dense";
  }
  return "unknown";
}

SegmentLayout::SegmentLayout(std::vector<int> segment_lengths, int visual_count)
    : lengths_(std::move(segment_lengths)), visual_count_(visual_count) {
  if (visual_count_ < 0) throw Error(ErrorCode::LayoutMismatch, "negative visual token count");
  offsets_.assign(1, 0);
  for (int len : lengths_) {
    if (len < 1) throw Error(ErrorCode::LayoutMismatch, "every condition segment needs at least one token");
    offsets_.push_back(offsets_.back() + len);
  }
}

int SegmentLayout::segment_of(int pos) const {
  if (pos >= text_count()) return -1;
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), pos);
  return static_cast<int>(it - offsets_.begin()) - 1;
}

AttentionMask::AttentionMask(SegmentLayout layout, MaskMode mode) : layout_(std::move(layout)), mode_(mode) {
  const int s = layout_.total();
  words_per_row_ = (s + 63) / 64;
  words_.assign(static_cast<std::size_t>(s) * static_cast<std::size_t>(words_per_row_), 0);
}

bool AttentionMask::query(int q, int k) const {
  const int s = size();
  if (q < 0 || k < 0 || q >= s || k >= s) {
    throw Error(ErrorCode::IndexOutOfRange,
                "(" + std::to_string(q) + ", " + std::to_string(k) + ") outside a " + std::to_string(s) + "x" +
                    std::to_string(s) + " mask");
  }
  return test(q, k);
}

std::size_t AttentionMask::allowed_count() const {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

namespace {

void set_range(AttentionMask& m, int q, int begin, int end) {
  for (int k = begin; k < end; ++k) m.set(q, k);
}

}  // namespace

AttentionMask build_attention_mask(const SegmentLayout& layout, const RegionMap& regions, MaskMode mode) {
  const int n = layout.condition_count();
  const int v = layout.visual_count();
  if (regions.n_conditions != n) {
    throw Error(ErrorCode::LayoutMismatch, "region map has " + std::to_string(regions.n_conditions) +
                                               " conditions, layout has " + std::to_string(n));
  }
  if (static_cast<int>(regions.membership.size()) != v) {
    throw Error(ErrorCode::LayoutMismatch, "region map has " + std::to_string(regions.membership.size()) +
                                               " tokens, layout has " + std::to_string(v));
  }

  AttentionMask mask(layout, mode);
  const int s = layout.total();
  const int vis0 = layout.visual_offset();
  if (mode == MaskMode::Dense) {
    for (int q = 0; q < s; ++q) set_range(mask, q, 0, s);
    return mask;
  }

  // Per-token condition bitsets for intersection tests.
  const int cw = (n + 63) / 64;
  std::vector<std::uint64_t> member_bits(static_cast<std::size_t>(v) * static_cast<std::size_t>(std::max(cw, 1)), 0);
  std::vector<std::vector<int>> tokens_of(static_cast<std::size_t>(n));
  for (int t = 0; t < v; ++t) {
    for (int id : regions.membership[static_cast<std::size_t>(t)]) {
      if (id < 0 || id >= n) throw Error(ErrorCode::LayoutMismatch, "membership references condition " + std::to_string(id));
      member_bits[static_cast<std::size_t>(t * cw + id / 64)] |= std::uint64_t{1} << (id % 64);
      tokens_of[static_cast<std::size_t>(id)].push_back(t);
    }
  }

  // Text rows: own segment plus the owning visual tokens.
  for (int i = 0; i < n; ++i) {
    const int begin = layout.segment_offset(i);
    const int end = begin + layout.segment_length(i);
    for (int q = begin; q < end; ++q) {
      set_range(mask, q, begin, end);
      for (int t : tokens_of[static_cast<std::size_t>(i)]) mask.set(q, vis0 + t);
    }
  }

  // Visual rows.
  for (int tq = 0; tq < v; ++tq) {
    const int q = vis0 + tq;
    for (int id : regions.membership[static_cast<std::size_t>(tq)]) {
      set_range(mask, q, layout.segment_offset(id), layout.segment_offset(id) + layout.segment_length(id));
    }
    if (mode == MaskMode::Sr3a) {
      set_range(mask, q, vis0, s);
      continue;
    }
    const std::uint64_t* qb = &member_bits[static_cast<std::size_t>(tq * cw)];
    for (int tk = 0; tk < v; ++tk) {
      const std::uint64_t* kb = &member_bits[static_cast<std::size_t>(tk * cw)];
      bool shared = false;
      for (int w = 0; w < cw && !shared; ++w) shared = (qb[w] & kb[w]) != 0;
      if (shared) mask.set(q, vis0 + tk);
    }
    mask.set(q, q);
  }
  return mask;
}

bool mask_query(const AttentionMask& mask, int q, int k) { return mask.query(q, k); }

std::string export_mask(const AttentionMask& mask, MaskFormat format) {
  const int s = mask.size();
  std::string out;
  if (format == MaskFormat::Pgm) {
    out = "P5\n" + std::to_string(s) + " " + std::to_string(s) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(s) * static_cast<std::size_t>(s));
    for (int q = 0; q < s; ++q) {
      for (int k = 0; k < s; ++k) out.push_back(static_cast<char>(mask.test(q, k) ? 0xFF : 0x00));
    }
    return out;
  }
  out = "SR3A";
  detail::put_u32(out, static_cast<std::uint32_t>(s));
  out.push_back(static_cast<char>(mask.mode()));
  for (std::uint64_t w : mask.words()) detail::put_u64(out, w);
  return out;
}

AttentionMask import_mask_bitset(std::string_view bytes, const SegmentLayout* layout) {
  if (bytes.size() < 9 || bytes.substr(0, 4) != "SR3A") throw Error(ErrorCode::Format, "missing SR3A header");
  const std::uint32_t s = detail::get_u32(bytes.substr(4));
  const auto mode_byte = static_cast<std::uint8_t>(bytes[8]);
  if (mode_byte > 2) throw Error(ErrorCode::Format, "unknown mask mode byte " + std::to_string(mode_byte));
  SegmentLayout resolved = layout ? *layout : SegmentLayout({}, static_cast<int>(s));
  if (resolved.total() != static_cast<int>(s)) throw Error(ErrorCode::LayoutMismatch, "layout size does not match the mask");
  AttentionMask mask(resolved, static_cast<MaskMode>(mode_byte));
  const std::size_t expected = 9 + mask.words_.size() * 8;
  if (bytes.size() != expected) {
    throw Error(ErrorCode::Format, "bitset payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                                       std::to_string(expected));
  }
  for (std::size_t i = 0; i < mask.words_.size(); ++i) mask.words_[i] = detail::get_u64(bytes.substr(9 + 8 * i));
  return mask;
}

std::string segment_layout_to_json(const SegmentLayout& layout) {
  return nlohmann::json{{"segment_lengths", layout.segment_lengths()}, {"visual_count", layout.visual_count()}}.dump();
}

SegmentLayout segment_layout_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    return SegmentLayout(j.at("segment_lengths").get<std::vector<int>>(), j.at("visual_count").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("segment layout: ") + e.what());
  }
}

}  // namespace storyweave
