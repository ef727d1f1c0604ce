// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitives shared by the binary artifact formats.

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace storyweave::detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

inline std::uint32_t get_u32(std::string_view in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, double value) {
  const auto f = static_cast<float>(value);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

inline float get_f32(std::string_view in) {
  const std::uint32_t bits = get_u32(in);
  float f = 0.0F;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace storyweave::detail
