// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "storyweave/error.hpp"
#include "storyweave/plan.hpp"
#include "text_util.hpp"

namespace storyweave {
namespace {

std::string describe_box(const BBox& b) {
  return "[" + format_coordinate(b.x0) + ", " + format_coordinate(b.y0) + ", " + format_coordinate(b.x1) + ", " +
         format_coordinate(b.y1) + "]";
}

bool is_none(std::string_view motion) { return detail::iequals(detail::trim(motion), kNoMotion); }

/// Position of `entry` among same-named entities in its frame.
int occurrence_of(const std::vector<RegionEntry>& frame, std::size_t index) {
  int n = 0;
  for (std::size_t i = 0; i < index; ++i) {
    if (frame[i].entity == frame[index].entity) ++n;
  }
  return n;
}

const RegionEntry* find_occurrence(const std::vector<RegionEntry>& frame, const std::string& entity,
                                   int occurrence) {
  int n = 0;
  for (const RegionEntry& e : frame) {
    if (e.entity != entity) continue;
    if (n == occurrence) return &e;
    ++n;
  }
  return nullptr;
}

double lerp_clamped(double a, double b, double t) {
  const double v = a + t * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

/// Crude present-progressive stem: "swimming" -> "swim", "waking up" -> "wak".
std::string motion_stem(std::string_view motion) {
  std::string word = detail::lower(detail::trim(motion));
  if (auto sp = word.find(' '); sp != std::string::npos) word.erase(sp);
  if (word.size() > 5 && word.ends_with("ing")) word.erase(word.size() - 3);
  if (word.size() > 3 && word[word.size() - 1] == word[word.size() - 2]) word.pop_back();
  return word;
}

}  // namespace

ValidationReport validate_frame_plan(const FrameLevelPlan& plan, const RuleConfig& rules) {
  ValidationReport report;
  const double tol = rules.tolerance;

  if (plan.background.empty()) report.errors.push_back({1, -1, "", "background description is empty"});
  if (plan.key_frames.size() != kKeyFrameCount) {
    report.errors.push_back(
        {1, -1, "", "expected 6 key frames, found " + std::to_string(plan.key_frames.size())});
  }

  std::set<std::string> allowed;
  if (rules.allowed_motions) {
    for (const auto& m : *rules.allowed_motions) allowed.insert(detail::lower(detail::trim(m)));
  }

  for (std::size_t k = 0; k < plan.key_frames.size(); ++k) {
    const int frame = static_cast<int>(k);
    for (const RegionEntry& e : plan.key_frames[k]) {
      const BBox& b = e.bbox;
      if (e.entity.empty() || e.caption.empty()) {
        report.errors.push_back({3, frame, e.entity, "entity and caption must be non-empty"});
      }
      if (!b.valid()) {
        report.errors.push_back({3, frame, e.entity, "bbox " + describe_box(b) + " is outside [0,1] or inverted"});
      } else if (b.width() + tol < rules.min_box_side || b.height() + tol < rules.min_box_side) {
        report.errors.push_back({2, frame, e.entity,
                                 "bbox " + describe_box(b) + " is narrower or shorter than " +
                                     format_coordinate(rules.min_box_side)});
      }
      if (rules.allowed_motions && !is_none(e.motion) && !allowed.contains(detail::lower(detail::trim(e.motion)))) {
        report.errors.push_back({8, frame, e.entity, "motion \"" + e.motion + "\" is not one of the scene motions"});
      }
    }
  }

  // Rule 9: every non-"none" motion lasts at least min_motion_frames consecutive key frames.
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& frame : plan.key_frames) {
    for (const RegionEntry& e : frame) {
      if (!is_none(e.motion)) pairs.emplace(e.entity, detail::lower(e.motion));
    }
  }
  for (const auto& [entity, motion] : pairs) {
    int run_start = -1;
    for (std::size_t k = 0; k <= plan.key_frames.size(); ++k) {
      bool present = false;
      if (k < plan.key_frames.size()) {
        present = std::any_of(plan.key_frames[k].begin(), plan.key_frames[k].end(), [&](const RegionEntry& e) {
          return e.entity == entity && detail::lower(e.motion) == motion;
        });
      }
      if (present && run_start < 0) run_start = static_cast<int>(k);
      if (!present && run_start >= 0) {
        const int length = static_cast<int>(k) - run_start;
        if (length < rules.min_motion_frames) {
          report.errors.push_back({9, run_start, entity,
                                   "motion \"" + motion + "\" lasts " + std::to_string(length) +
                                       " key frame(s), needs at least " + std::to_string(rules.min_motion_frames)});
        }
        run_start = -1;
      }
    }
  }

  // Rule 12: adjacent key frames should not move a box too far.
  for (std::size_t k = 1; k < plan.key_frames.size(); ++k) {
    const auto& prev = plan.key_frames[k - 1];
    const auto& cur = plan.key_frames[k];
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const RegionEntry* before = find_occurrence(prev, cur[i].entity, occurrence_of(cur, i));
      if (before == nullptr) continue;
      const BBox& a = before->bbox;
      const BBox& b = cur[i].bbox;
      const double jump = std::max({std::abs(a.x0 - b.x0), std::abs(a.y0 - b.y0), std::abs(a.x1 - b.x1),
                                    std::abs(a.y1 - b.y1)});
      if (jump > rules.max_corner_jump + tol) {
        report.warnings.push_back({12, static_cast<int>(k), cur[i].entity,
                                   "a box corner moves " + format_coordinate(jump) + " from the previous key frame"});
      }
    }
  }
  return report;
}

ValidationReport validate_high_level_plan(const HighLevelPlan& plan) {
  ValidationReport report;
  const auto n = plan.scenes.size();
  if (n < 5 || n > 8) {
    report.errors.push_back({1, -1, "", "expected 5 to 8 scenes, found " + std::to_string(n)});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const SceneOutline& s = plan.scenes[i];
    const int scene = static_cast<int>(i);
    if (s.motions.empty()) report.errors.push_back({1, scene, s.scene_name, "scene has no motions"});
    if (s.narration.empty()) report.errors.push_back({1, scene, s.scene_name, "scene has no narration"});
    if (s.motions.size() > 4) {
      report.warnings.push_back({1, scene, s.scene_name, "more than 4 motions in one scene"});
    }
    const std::string narration = detail::lower(s.narration);
    for (const auto& m : s.motions) {
      if (narration.find(motion_stem(m)) == std::string::npos) {
        report.warnings.push_back({1, scene, s.scene_name, "motion \"" + m + "\" does not appear in the narration"});
      }
    }
  }
  return report;
}

LatentPlan interpolate_plan(const FrameLevelPlan& plan, std::size_t latent_frame_count, InterpolationMode mode) {
  if (latent_frame_count < 2) {
    throw Error(ErrorCode::InvalidFrameCount,
                "latent frame count must be at least 2, got " + std::to_string(latent_frame_count));
  }
  if (plan.key_frames.size() != kKeyFrameCount) {
    throw Error(ErrorCode::MissingFrame, "plan has " + std::to_string(plan.key_frames.size()) + " key frames");
  }
  const std::size_t keys_minus_one = plan.key_frames.size() - 1;
  const std::size_t span = latent_frame_count - 1;

  LatentPlan out;
  out.conditions.push_back(Condition{0, "background", std::string(kNoMotion), plan.background, {}});
  std::map<std::tuple<std::string, std::string, std::string>, int> ids;

  for (std::size_t f = 0; f < latent_frame_count; ++f) {
    // p = f * (K-1) / (F-1), kept exact as a rational.
    const std::size_t num = f * keys_minus_one;
    const std::size_t lo = num / span;
    const std::size_t rem = num % span;
    const std::size_t hi = rem == 0 ? lo : lo + 1;
    const double frac = static_cast<double>(rem) / static_cast<double>(span);
    const std::size_t nearest = 2 * rem <= span ? lo : hi;

    const auto& frame = plan.key_frames[nearest];
    std::vector<LatentRegion> regions;
    regions.reserve(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const RegionEntry& e = frame[i];
      BBox box = e.bbox;
      if (mode == InterpolationMode::Linear && lo != hi) {
        const int occ = occurrence_of(frame, i);
        const RegionEntry* at_lo = nearest == lo ? &e : find_occurrence(plan.key_frames[lo], e.entity, occ);
        const RegionEntry* at_hi = nearest == hi ? &e : find_occurrence(plan.key_frames[hi], e.entity, occ);
        const BBox a = at_lo ? at_lo->bbox : e.bbox;
        const BBox b = at_hi ? at_hi->bbox : e.bbox;
        box = BBox{lerp_clamped(a.x0, b.x0, frac), lerp_clamped(a.y0, b.y0, frac), lerp_clamped(a.x1, b.x1, frac),
                   lerp_clamped(a.y1, b.y1, frac)};
      }
      auto key = std::make_tuple(e.entity, e.motion, e.caption);
      auto [it, inserted] = ids.try_emplace(key, static_cast<int>(out.conditions.size()));
      if (inserted) out.conditions.push_back(Condition{it->second, e.entity, e.motion, e.caption, {}});
      auto& frames_of = out.conditions[static_cast<std::size_t>(it->second)].latent_frame_span;
      if (frames_of.empty() || frames_of.back() != static_cast<int>(f)) frames_of.push_back(static_cast<int>(f));
      regions.push_back(LatentRegion{it->second, box});
    }
    out.conditions[0].latent_frame_span.push_back(static_cast<int>(f));
    out.latent_frames.push_back(std::move(regions));
  }
  return out;
}

std::vector<int> conditions_for_entity(const LatentPlan& plan, std::string_view entity) {
  std::vector<int> ids;
  for (const Condition& c : plan.conditions) {
    if (c.id != 0 && detail::iequals(c.entity, entity)) ids.push_back(c.id);
  }
  return ids;
}

std::vector<int> conditions_for_motion(const LatentPlan& plan, std::string_view motion) {
  std::vector<int> ids;
  for (const Condition& c : plan.conditions) {
    if (c.id != 0 && detail::iequals(c.motion, motion)) ids.push_back(c.id);
  }
  return ids;
}

}  // namespace storyweave
