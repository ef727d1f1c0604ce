// SPDX-License-Identifier: Apache-2.0
//
// Dual-level story plans: the scene catalog produced by the story planner and
// the six-key-frame region layout produced per scene, plus the interpolation
// of key frames onto the latent frame axis.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace storyweave {

inline constexpr std::size_t kKeyFrameCount = 6;
inline constexpr std::size_t kDefaultLatentFrames = 12;
inline constexpr std::string_view kNoMotion = "none";

struct SceneOutline {
  std::string scene_name;
  std::vector<std::string> motions;
  std::string narration;

  bool operator==(const SceneOutline&) const = default;
};

struct HighLevelPlan {
  std::vector<SceneOutline> scenes;

  bool operator==(const HighLevelPlan&) const = default;
};

/// Normalized [x0, y0, x1, y1], top-left and bottom-right corners.
struct BBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 1.0;
  double y1 = 1.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool valid() const {
    return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0;
  }

  bool operator==(const BBox&) const = default;
};

struct RegionEntry {
  std::string entity;
  std::string motion;  // "none" for static entities
  std::string caption;
  BBox bbox;

  bool operator==(const RegionEntry&) const = default;
};

struct FrameLevelPlan {
  std::string background;
  std::vector<std::vector<RegionEntry>> key_frames;  // exactly kKeyFrameCount

  bool operator==(const FrameLevelPlan&) const = default;
};

struct Finding {
  int rule_id = 0;
  int frame_index = -1;  // 0-based key frame, -1 when not frame-specific
  std::string entity;
  std::string message;

  bool operator==(const Finding&) const = default;
};

struct ValidationReport {
  std::vector<Finding> errors;
  std::vector<Finding> warnings;

  bool accepted() const { return errors.empty(); }
};

struct RuleConfig {
  double min_box_side = 0.2;
  double max_corner_jump = 0.35;
  int min_motion_frames = 2;
  /// Declared scene motions; when set, every non-"none" motion must be drawn from it.
  std::optional<std::vector<std::string>> allowed_motions;
  /// Tolerance applied to size comparisons.
  double tolerance = 1e-9;
};

struct Condition {
  int id = 0;
  std::string entity;
  std::string motion;
  std::string caption;
  std::vector<int> latent_frame_span;  // sorted latent frame indices where the condition is present

  bool operator==(const Condition&) const = default;
};

struct LatentRegion {
  int condition_id = 0;
  BBox bbox;

  bool operator==(const LatentRegion&) const = default;
};

struct LatentPlan {
  std::vector<Condition> conditions;                 // conditions[0] is the background
  std::vector<std::vector<LatentRegion>> latent_frames;  // one list per latent frame
  int frame_count() const { return static_cast<int>(latent_frames.size()); }

  bool operator==(const LatentPlan&) const = default;
};

enum class InterpolationMode { Linear, Nearest };

// Text format.
HighLevelPlan parse_high_level_plan(std::string_view text);
std::string emit_high_level_plan(const HighLevelPlan& plan);
FrameLevelPlan parse_frame_plan(std::string_view text);
std::string emit_frame_plan(const FrameLevelPlan& plan);

/// Shortest decimal with at most four fractional digits and at least one.
std::string format_coordinate(double value);

// Validation findings are data; these never throw on content problems.
ValidationReport validate_frame_plan(const FrameLevelPlan& plan, const RuleConfig& rules = {});
ValidationReport validate_high_level_plan(const HighLevelPlan& plan);

LatentPlan interpolate_plan(const FrameLevelPlan& plan,
                            std::size_t latent_frame_count = kDefaultLatentFrames,
                            InterpolationMode mode = InterpolationMode::Linear);

/// Ids of every condition whose entity (case-insensitive) matches `entity`.
std::vector<int> conditions_for_entity(const LatentPlan& plan, std::string_view entity);
/// Ids of every condition whose motion (case-insensitive) matches `motion`.
std::vector<int> conditions_for_motion(const LatentPlan& plan, std::string_view motion);

// Canonical JSON interchange.
std::string frame_plan_to_json(const FrameLevelPlan& plan);
FrameLevelPlan frame_plan_from_json(std::string_view json);
std::string latent_plan_to_json(const LatentPlan& plan);
LatentPlan latent_plan_from_json(std::string_view json);
std::string high_level_plan_to_json(const HighLevelPlan& plan);
std::string report_to_json(const ValidationReport& report);

}  // namespace storyweave
