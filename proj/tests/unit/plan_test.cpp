// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <string>

#include "storyweave/error.hpp"
#include "storyweave/plan.hpp"
#include "test_support.hpp"

using namespace storyweave;
using storyweave::testing::fixture;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::Io;
}

bool has_error_rule(const ValidationReport& r, int rule) {
  for (const auto& f : r.errors) {
    if (f.rule_id == rule) return true;
  }
  return false;
}

FrameLevelPlan single_entity_plan(const std::string& motion, BBox box) {
  FrameLevelPlan p;
  p.background = "a plain room";
  for (int f = 0; f < 6; ++f) p.key_frames.push_back({RegionEntry{"cat", motion, "a cat in a room", box}});
  return p;
}

// Independent evaluation of the key-frame lerp for one entity that is present in every key frame.
double lerp_oracle(const std::vector<double>& keys, int f, int latent_frames) {
  const double p = static_cast<double>(f) * 5.0 / static_cast<double>(latent_frames - 1);
  const int lo = static_cast<int>(std::floor(p));
  const int hi = static_cast<int>(std::ceil(p));
  const double frac = p - lo;
  return keys[static_cast<std::size_t>(lo)] + frac * (keys[static_cast<std::size_t>(hi)] - keys[static_cast<std::size_t>(lo)]);
}

}  // namespace

TEST_CASE("high-level plan: story fixture parses into six scenes") {
  const HighLevelPlan plan = parse_high_level_plan(fixture("mermaid_story_plan.txt"));
  REQUIRE(plan.scenes.size() == 6);
  CHECK(plan.scenes[0].scene_name == "Coral Reef");
  CHECK(plan.scenes[0].motions == std::vector<std::string>{"swimming", "touching"});
  CHECK(plan.scenes[0].narration.rfind("The Mermaid begins her day", 0) == 0);
  CHECK(plan.scenes[1].scene_name == "Sunken Ship");
}

TEST_CASE("high-level plan: empty text has no scene") {
  CHECK(code_of([] { parse_high_level_plan(""); }) == ErrorCode::MissingScene);
}

TEST_CASE("high-level plan: missing narration and malformed header are named") {
  CHECK(code_of([] { parse_high_level_plan("Scene 1: Park\nMotions:\nwalking\n"); }) == ErrorCode::MissingNarration);
  try {
    parse_high_level_plan("Scene one:\nMotions:\nwalking\nNarration:\nShe is walking.\n");
    FAIL("expected MalformedHeader");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedHeader);
    CHECK(std::string(e.what()).find("Scene one:") != std::string::npos);
  }
}

TEST_CASE("high-level plan: emit and parse reach a fixpoint") {
  const HighLevelPlan plan = parse_high_level_plan(fixture("mermaid_story_plan.txt"));
  const HighLevelPlan again = parse_high_level_plan(emit_high_level_plan(plan));
  CHECK(again == plan);
  CHECK(emit_high_level_plan(again) == emit_high_level_plan(plan));
}

TEST_CASE("high-level plan: validation") {
  const HighLevelPlan plan = parse_high_level_plan(fixture("mermaid_story_plan.txt"));
  CHECK(validate_high_level_plan(plan).accepted());
  HighLevelPlan short_plan = plan;
  short_plan.scenes.resize(4);
  CHECK_FALSE(validate_high_level_plan(short_plan).accepted());
}

TEST_CASE("frame plan: first key frame of the mermaid layout") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("mermaid_frame_plan.txt"));
  REQUIRE(plan.key_frames.size() == 6);
  CHECK(plan.background == "the vibrant coral reef full of colors and life");
  const auto& f1 = plan.key_frames[0];
  REQUIRE(f1.size() == 2);
  CHECK(f1[0] == RegionEntry{"Mermaid", "swimming", "The Mermaid is swimming through the vibrant coral reef",
                             BBox{0.0, 0.0, 0.4, 1.0}});
  CHECK(f1[1] == RegionEntry{"corals", "none", "Colorful corals in the reef", BBox{0.5, 0.3, 0.8, 0.6}});
}

TEST_CASE("frame plan: teddy example") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("teddy_frame_plan.txt"));
  CHECK(plan.key_frames.size() == 6);
  CHECK(plan.background == "the forest");
  CHECK(plan.key_frames[4][0].motion == "sitting");
  CHECK(plan.key_frames[0][1].bbox == BBox{0.0, 0.8, 0.2, 1.0});
}

TEST_CASE("frame plan: five frames is missing the sixth") {
  std::string text = "Background: a street\n";
  for (int k = 1; k <= 5; ++k) {
    text += "Frame_" + std::to_string(k) + ": [[\"dog\", \"running\", \"a dog running\"], [0.0, 0.0, 0.5, 0.5]]\n";
  }
  try {
    parse_frame_plan(text);
    FAIL("expected MissingFrame");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFrame);
    CHECK(std::string(e.what()).find('6') != std::string::npos);
  }
}

TEST_CASE("frame plan: error kinds") {
  CHECK(code_of([] { parse_frame_plan("Frame_1: [[\"a\", \"none\", \"b\"], [0, 0, 1, 1]]\n"); }) ==
        ErrorCode::MissingBackground);
  CHECK(code_of([] { parse_frame_plan("Background: x\nFrame_1: [[\"a\", \"none\", \"b\"], [0, 0, 1]]\n"); }) ==
        ErrorCode::MalformedBBox);
  CHECK(code_of([] { parse_frame_plan("Background: x\nFrame_1: [[\"a\", \"none\"], [0, 0, 1, 1]]\n"); }) ==
        ErrorCode::MalformedEntry);
}

TEST_CASE("frame plan: curly quotes normalize to straight") {
  std::string text = "Background: a meadow\n";
  for (int k = 1; k <= 6; ++k) {
    text += "Frame_" + std::to_string(k) +
            ": [[\xE2\x80\x9C" "fox" "\xE2\x80\x9D, \xE2\x80\x9C" "running" "\xE2\x80\x9D, \xE2\x80\x9C"
            "a fox running" "\xE2\x80\x9D], [0.1, 0.1, 0.9, 0.9]]\n";
  }
  const FrameLevelPlan plan = parse_frame_plan(text);
  CHECK(plan.key_frames[3][0].entity == "fox");
  CHECK(plan.key_frames[3][0].caption == "a fox running");
  CHECK(emit_frame_plan(plan).find("\"fox\"") != std::string::npos);
}

TEST_CASE("frame plan: emit round-trips the fixtures") {
  for (const char* name : {"mermaid_frame_plan.txt", "teddy_frame_plan.txt"}) {
    const FrameLevelPlan plan = parse_frame_plan(fixture(name));
    const std::string text = emit_frame_plan(plan);
    CHECK(parse_frame_plan(text) == plan);
    CHECK(emit_frame_plan(parse_frame_plan(text)) == text);
  }
  const FrameLevelPlan single = single_entity_plan("none", BBox{0.25, 0.0, 0.75, 1.0});
  CHECK(parse_frame_plan(emit_frame_plan(single)) == single);
  CHECK(emit_frame_plan(single).find("[0.25, 0.0, 0.75, 1.0]") != std::string::npos);
}

TEST_CASE("coordinate formatting keeps at most four fractional digits") {
  CHECK(format_coordinate(0.25) == "0.25");
  CHECK(format_coordinate(1.0) == "1.0");
  CHECK(format_coordinate(0.0) == "0.0");
  CHECK(format_coordinate(1.0 / 3.0) == "0.3333");
  CHECK(format_coordinate(-0.0) == "0.0");
}

TEST_CASE("frame plan validation rules") {
  SUBCASE("narrow box violates the minimum side") {
    const auto r = validate_frame_plan(single_entity_plan("none", BBox{0.0, 0.0, 0.1, 1.0}));
    CHECK(has_error_rule(r, 2));
  }
  SUBCASE("motion in a single key frame is too short") {
    FrameLevelPlan p = single_entity_plan("walking", BBox{0, 0, 1, 1});
    p.key_frames[5][0].motion = "sitting";
    CHECK(has_error_rule(validate_frame_plan(p), 9));
  }
  SUBCASE("full-frame entity with one motion is clean") {
    const auto r = validate_frame_plan(single_entity_plan("walking", BBox{0, 0, 1, 1}));
    CHECK(r.errors.empty());
    CHECK(r.warnings.empty());
  }
  SUBCASE("undeclared motion") {
    RuleConfig rules;
    rules.allowed_motions = std::vector<std::string>{"running"};
    CHECK(has_error_rule(validate_frame_plan(single_entity_plan("walking", BBox{0, 0, 1, 1}), rules), 8));
  }
  SUBCASE("large jump is a warning") {
    FrameLevelPlan p = single_entity_plan("walking", BBox{0, 0, 0.4, 1});
    for (int f = 3; f < 6; ++f) p.key_frames[static_cast<std::size_t>(f)][0].bbox = BBox{0.6, 0, 1.0, 1};
    const auto r = validate_frame_plan(p);
    CHECK(r.errors.empty());
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("fixtures pass") {
    CHECK(validate_frame_plan(parse_frame_plan(fixture("mermaid_frame_plan.txt"))).errors.empty());
    CHECK(validate_frame_plan(parse_frame_plan(fixture("teddy_frame_plan.txt"))).errors.empty());
  }
}

TEST_CASE("interpolation: endpoints equal the first and last key frames") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("mermaid_frame_plan.txt"));
  const LatentPlan lp = interpolate_plan(plan, 12);
  REQUIRE(lp.frame_count() == 12);
  for (int end : {0, 11}) {
    const auto& key = plan.key_frames[end == 0 ? 0 : 5];
    const auto& lat = lp.latent_frames[static_cast<std::size_t>(end)];
    REQUIRE(lat.size() == key.size());
    for (std::size_t i = 0; i < key.size(); ++i) {
      CHECK(lat[i].bbox == key[i].bbox);
      const Condition& c = lp.conditions[static_cast<std::size_t>(lat[i].condition_id)];
      CHECK(c.entity == key[i].entity);
      CHECK(c.caption == key[i].caption);
    }
  }
}

TEST_CASE("interpolation: teddy trajectory against a closed-form lerp") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("teddy_frame_plan.txt"));
  const LatentPlan lp = interpolate_plan(plan, 12);
  const std::vector<double> keys_x0{0.6, 0.47, 0.33, 0.2, 0.0, 0.0};
  CHECK(lp.latent_frames[5][0].bbox.x0 == doctest::Approx(0.33 + (3.0 / 11.0) * (0.2 - 0.33)).epsilon(1e-12));
  double prev = 2.0;
  for (int f = 0; f < 12; ++f) {
    const double x0 = lp.latent_frames[static_cast<std::size_t>(f)][0].bbox.x0;
    CHECK(x0 == doctest::Approx(lerp_oracle(keys_x0, f, 12)).epsilon(1e-12));
    CHECK(x0 <= prev);
    prev = x0;
  }
}

TEST_CASE("interpolation: conditions of the mermaid layout") {
  const LatentPlan lp = interpolate_plan(parse_frame_plan(fixture("mermaid_frame_plan.txt")));
  REQUIRE(lp.conditions.size() == 4);
  CHECK(lp.conditions[0].caption == "the vibrant coral reef full of colors and life");
  CHECK(lp.conditions[1].entity == "Mermaid");
  CHECK(lp.conditions[1].motion == "swimming");
  CHECK(lp.conditions[2].entity == "corals");
  CHECK(lp.conditions[2].motion == "none");
  CHECK(lp.conditions[3].motion == "touching");
  for (std::size_t i = 0; i < lp.conditions.size(); ++i) CHECK(lp.conditions[i].id == static_cast<int>(i));
  CHECK(conditions_for_entity(lp, "mermaid") == std::vector<int>{1, 3});
  CHECK(conditions_for_motion(lp, "touching") == std::vector<int>{3});
}

TEST_CASE("interpolation: boxes stay valid and runs are deterministic") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("teddy_frame_plan.txt"));
  for (int f_count : {2, 6, 12, 17}) {
    const LatentPlan lp = interpolate_plan(plan, f_count);
    for (const auto& frame : lp.latent_frames) {
      for (const auto& region : frame) CHECK(region.bbox.valid());
    }
    CHECK(interpolate_plan(plan, f_count) == lp);
  }
  CHECK(code_of([&] { interpolate_plan(plan, 1); }) == ErrorCode::InvalidFrameCount);
}

TEST_CASE("interpolation: nearest mode copies key boxes") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("teddy_frame_plan.txt"));
  const LatentPlan lp = interpolate_plan(plan, 12, InterpolationMode::Nearest);
  // f = 5 maps to p = 25/11 ~ 2.27, nearest key 2.
  CHECK(lp.latent_frames[5][0].bbox == plan.key_frames[2][0].bbox);
}

TEST_CASE("plan JSON round trips") {
  const FrameLevelPlan plan = parse_frame_plan(fixture("mermaid_frame_plan.txt"));
  CHECK(frame_plan_from_json(frame_plan_to_json(plan)) == plan);
  const LatentPlan lp = interpolate_plan(plan);
  CHECK(latent_plan_from_json(latent_plan_to_json(lp)) == lp);
}
