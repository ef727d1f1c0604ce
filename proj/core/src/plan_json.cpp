// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include "storyweave/error.hpp"
#include "storyweave/plan.hpp"

namespace storyweave {
namespace {

using nlohmann::json;

json box_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

BBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::MalformedBBox, "bbox must be a 4-element array");
  return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json findings_json(const std::vector<Finding>& findings) {
  json arr = json::array();
  for (const Finding& f : findings) {
    arr.push_back({{"rule_id", f.rule_id}, {"frame_index", f.frame_index}, {"entity", f.entity}, {"message", f.message}});
  }
  return arr;
}

template <typename Fn>
auto guarded(std::string_view what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string frame_plan_to_json(const FrameLevelPlan& plan) {
  json frames = json::array();
  for (const auto& frame : plan.key_frames) {
    json entries = json::array();
    for (const RegionEntry& e : frame) {
      entries.push_back({{"entity", e.entity}, {"motion", e.motion}, {"caption", e.caption}, {"bbox", box_json(e.bbox)}});
    }
    frames.push_back(std::move(entries));
  }
  return json{{"background", plan.background}, {"key_frames", std::move(frames)}}.dump(2);
}

FrameLevelPlan frame_plan_from_json(std::string_view text) {
  return guarded("frame plan JSON", [&] {
    const json j = json::parse(text);
    FrameLevelPlan plan;
    plan.background = j.at("background").get<std::string>();
    for (const json& frame : j.at("key_frames")) {
      std::vector<RegionEntry> entries;
      for (const json& e : frame) {
        entries.push_back(RegionEntry{e.at("entity").get<std::string>(), e.at("motion").get<std::string>(),
                                      e.at("caption").get<std::string>(), box_from(e.at("bbox"))});
      }
      plan.key_frames.push_back(std::move(entries));
    }
    return plan;
  });
}

std::string latent_plan_to_json(const LatentPlan& plan) {
  json conditions = json::array();
  for (const Condition& c : plan.conditions) {
    conditions.push_back({{"id", c.id},
                          {"entity", c.entity},
                          {"motion", c.motion},
                          {"caption", c.caption},
                          {"latent_frame_span", c.latent_frame_span}});
  }
  json frames = json::array();
  for (const auto& frame : plan.latent_frames) {
    json regions = json::array();
    for (const LatentRegion& r : frame) regions.push_back({{"condition_id", r.condition_id}, {"bbox", box_json(r.bbox)}});
    frames.push_back(std::move(regions));
  }
  return json{{"F", plan.frame_count()}, {"conditions", std::move(conditions)}, {"latent_frames", std::move(frames)}}
      .dump(2);
}

LatentPlan latent_plan_from_json(std::string_view text) {
  return guarded("latent plan JSON", [&] {
    const json j = json::parse(text);
    LatentPlan plan;
    for (const json& c : j.at("conditions")) {
      plan.conditions.push_back(Condition{c.at("id").get<int>(), c.at("entity").get<std::string>(),
                                          c.at("motion").get<std::string>(), c.at("caption").get<std::string>(),
                                          c.at("latent_frame_span").get<std::vector<int>>()});
    }
    for (const json& frame : j.at("latent_frames")) {
      std::vector<LatentRegion> regions;
      for (const json& r : frame) regions.push_back(LatentRegion{r.at("condition_id").get<int>(), box_from(r.at("bbox"))});
      plan.latent_frames.push_back(std::move(regions));
    }
    if (j.contains("F") && j.at("F").get<int>() != plan.frame_count()) {
      throw Error(ErrorCode::Format, "latent plan F does not match the number of latent frames");
    }
    for (std::size_t i = 0; i < plan.conditions.size(); ++i) {
      if (plan.conditions[i].id != static_cast<int>(i)) {
        throw Error(ErrorCode::Format, "condition ids must be contiguous from 0");
      }
    }
    for (const auto& frame : plan.latent_frames) {
      for (const LatentRegion& r : frame) {
        if (r.condition_id <= 0 || r.condition_id >= static_cast<int>(plan.conditions.size())) {
          throw Error(ErrorCode::Format, "region references unknown condition " + std::to_string(r.condition_id));
        }
      }
    }
    return plan;
  });
}

std::string high_level_plan_to_json(const HighLevelPlan& plan) {
  json scenes = json::array();
  for (const SceneOutline& s : plan.scenes) {
    scenes.push_back({{"scene_name", s.scene_name}, {"motions", s.motions}, {"narration", s.narration}});
  }
  return json{{"scenes", std::move(scenes)}}.dump(2);
}

std::string report_to_json(const ValidationReport& report) {
  return json{{"errors", findings_json(report.errors)}, {"warnings", findings_json(report.warnings)}}.dump(2);
}

}  // namespace storyweave
