// SPDX-License-Identifier: Apache-2.0

#include "storyweave/region.hpp"

#include <algorithm>
#include <charconv>

#include <json.hpp>

#include "storyweave/error.hpp"

namespace storyweave {

LatentGrid parse_grid(std::string_view text) {
  int dims[3] = {0, 0, 0};
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, dims[i]);
    if (ec != std::errc() || dims[i] <= 0) throw Error(ErrorCode::Format, "grid must be TxHxW, got " + std::string(text));
    p = next;
    if (i < 2) {
      if (p == end || (*p != 'x' && *p != 'X')) throw Error(ErrorCode::Format, "grid must be TxHxW, got " + std::string(text));
      ++p;
    }
  }
  if (p != end) throw Error(ErrorCode::Format, "grid must be TxHxW, got " + std::string(text));
  return LatentGrid{dims[0], dims[1], dims[2]};
}

std::vector<std::pair<int, int>> rasterize_bbox(const BBox& box, int h, int w, RasterRule rule) {
  std::vector<std::pair<int, int>> patches;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      bool inside = false;
      if (rule == RasterRule::CenterInBox) {
        const double cx = (c + 0.5) / w;
        const double cy = (r + 0.5) / h;
        inside = box.x0 <= cx && cx < box.x1 && box.y0 <= cy && cy < box.y1;
      } else {
        const double px0 = static_cast<double>(c) / w, px1 = static_cast<double>(c + 1) / w;
        const double py0 = static_cast<double>(r) / h, py1 = static_cast<double>(r + 1) / h;
        inside = box.x0 < px1 && px0 < box.x1 && box.y0 < py1 && py0 < box.y1;
      }
      if (inside) patches.emplace_back(r, c);
    }
  }
  return patches;
}

RegionMap build_region_map(const LatentPlan& plan, const LatentGrid& grid, BackgroundMode background,
                           RasterRule rule) {
  if (plan.frame_count() != grid.t) {
    throw Error(ErrorCode::GridMismatch, "latent plan has " + std::to_string(plan.frame_count()) +
                                             " frames but the grid has t=" + std::to_string(grid.t));
  }
  RegionMap map;
  map.grid = grid;
  map.n_conditions = static_cast<int>(plan.conditions.size());
  map.membership.assign(static_cast<std::size_t>(grid.token_count()), {});

  for (int f = 0; f < grid.t; ++f) {
    for (const LatentRegion& region : plan.latent_frames[static_cast<std::size_t>(f)]) {
      for (auto [r, c] : rasterize_bbox(region.bbox, grid.h, grid.w, rule)) {
        map.membership[static_cast<std::size_t>(grid.token_index(f, r, c))].push_back(region.condition_id);
      }
    }
  }
  for (auto& ids : map.membership) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (background == BackgroundMode::FullFrame || ids.empty()) ids.insert(ids.begin(), 0);
  }
  return map;
}

RegionMap uniform_region_map(const LatentGrid& grid, int n_conditions) {
  RegionMap map;
  map.grid = grid;
  map.n_conditions = n_conditions;
  map.membership.assign(static_cast<std::size_t>(grid.token_count()), std::vector<int>{0});
  return map;
}

std::vector<std::uint8_t> region_token_mask(const RegionMap& map, const std::vector<int>& condition_ids) {
  std::vector<std::uint8_t> mask(map.membership.size(), 0);
  for (std::size_t i = 0; i < map.membership.size(); ++i) {
    for (int id : map.membership[i]) {
      if (std::find(condition_ids.begin(), condition_ids.end(), id) != condition_ids.end()) {
        mask[i] = 1;
        break;
      }
    }
  }
  return mask;
}

std::string region_map_to_json(const RegionMap& map) {
  nlohmann::json j;
  j["grid"] = {{"t", map.grid.t}, {"h", map.grid.h}, {"w", map.grid.w}};
  j["n_conditions"] = map.n_conditions;
  j["membership"] = map.membership;
  return j.dump();
}

RegionMap region_map_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RegionMap map;
    map.grid = LatentGrid{j.at("grid").at("t").get<int>(), j.at("grid").at("h").get<int>(), j.at("grid").at("w").get<int>()};
    map.n_conditions = j.at("n_conditions").get<int>();
    map.membership = j.at("membership").get<std::vector<std::vector<int>>>();
    if (static_cast<int>(map.membership.size()) != map.grid.token_count()) {
      throw Error(ErrorCode::GridMismatch, "membership length does not match the grid");
    }
    for (const auto& ids : map.membership) {
      for (int id : ids) {
        if (id < 0 || id >= map.n_conditions) throw Error(ErrorCode::Format, "condition id out of range in region map");
      }
    }
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("region map JSON: ") + e.what());
  }
}

std::string region_frame_pgm(const RegionMap& map, int frame) {
  if (frame < 0 || frame >= map.grid.t) throw Error(ErrorCode::IndexOutOfRange, "frame " + std::to_string(frame));
  std::string out = "P5\n" + std::to_string(map.grid.w) + " " + std::to_string(map.grid.h) + "\n255\n";
  const int n = std::max(map.n_conditions, 1);
  for (int r = 0; r < map.grid.h; ++r) {
    for (int c = 0; c < map.grid.w; ++c) {
      const auto& ids = map.membership[static_cast<std::size_t>(map.grid.token_index(frame, r, c))];
      const int value = ids.empty() ? 255 : ids.front() * 255 / n;
      out.push_back(static_cast<char>(static_cast<unsigned char>(value)));
    }
  }
  return out;
}

}  // namespace storyweave
