// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "storyweave/plan.hpp"

namespace storyweave {

/// Latent token layout: t frames of h x w patches, row-major.
struct LatentGrid {
  int t = 12;
  int h = 8;
  int w = 8;

  int frame_tokens() const { return h * w; }
  int token_count() const { return t * h * w; }
  int token_index(int ti, int hi, int wi) const { return ti * h * w + hi * w + wi; }

  bool operator==(const LatentGrid&) const = default;
};

/// Parses "TxHxW" (e.g. "12x8x8").
LatentGrid parse_grid(std::string_view text);

enum class RasterRule {
  CenterInBox,  // patch center in [x0,x1) x [y0,y1)
  AnyOverlap,   // patch rectangle overlaps the box with positive area
};

enum class BackgroundMode { Complement, FullFrame };

struct RegionMap {
  LatentGrid grid;
  int n_conditions = 0;
  std::vector<std::vector<int>> membership;  // per token, ascending condition ids

  bool operator==(const RegionMap&) const = default;
};

/// Patches (row, col) of an h x w frame covered by `box`.
std::vector<std::pair<int, int>> rasterize_bbox(const BBox& box, int h, int w,
                                                RasterRule rule = RasterRule::CenterInBox);

RegionMap build_region_map(const LatentPlan& plan, const LatentGrid& grid,
                           BackgroundMode background = BackgroundMode::Complement,
                           RasterRule rule = RasterRule::CenterInBox);

/// Every token belongs to condition 0 only; used for single-caption training clips.
RegionMap uniform_region_map(const LatentGrid& grid, int n_conditions = 1);

/// Per-token 0/1 mask of tokens whose membership intersects `condition_ids`.
std::vector<std::uint8_t> region_token_mask(const RegionMap& map, const std::vector<int>& condition_ids);

std::string region_map_to_json(const RegionMap& map);
RegionMap region_map_from_json(std::string_view json);

/// P5 8-bit image of one latent frame; pixel = lowest member id * 255 / n_conditions,
/// 255 for tokens with no member.
std::string region_frame_pgm(const RegionMap& map, int frame);

}  // namespace storyweave
