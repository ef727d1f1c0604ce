// SPDX-License-Identifier: Apache-2.0
//
// Prompt templates for the story and layout planners, text-generation
// backends, and plan generation with parse-and-retry.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "storyweave/plan.hpp"

namespace storyweave {

enum class TemplateId { HighLevel, FineGrained };

std::string to_string(TemplateId id);
TemplateId parse_template_id(std::string_view text);  // "high_level" | "fine_grained"

using SlotMap = std::map<std::string, std::string>;

struct PromptTemplate {
  TemplateId id = TemplateId::HighLevel;
  std::string body;
  std::vector<std::string> slots;  // in order of appearance

  /// Scans `body` for {slot} markers; each must appear exactly once.
  static PromptTemplate from_text(TemplateId id, std::string body);
  static PromptTemplate builtin(TemplateId id);
};

/// Substitutes every slot; nothing else in the body changes.
std::string render_prompt(const PromptTemplate& tmpl, const SlotMap& slots);

/// Recovers slot values from a rendered prompt (inverse of render_prompt).
SlotMap extract_slots(const PromptTemplate& tmpl, std::string_view rendered);

/// Slots for the layout prompt of one scene.
SlotMap scene_slots(const SceneOutline& scene);

struct StoryRequest {
  std::optional<std::string> topic;  // unset: the topic slot is missing
  std::vector<std::pair<std::string, std::string>> characters;  // (name, reference image path)
  int max_retries = 3;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual std::string generate(std::string_view prompt) = 0;
};

/// Serves canned responses in order; the directory form reads every regular
/// file sorted by name.
class ReplayBackend final : public TextBackend {
 public:
  explicit ReplayBackend(std::vector<std::string> responses);
  static ReplayBackend from_directory(const std::filesystem::path& dir);

  std::string generate(std::string_view prompt) override;

  std::size_t calls() const { return prompts_.size(); }
  const std::vector<std::string>& prompts() const { return prompts_; }

 private:
  std::vector<std::string> responses_;
  std::vector<std::string> prompts_;
};

/// POSTs {"prompt": ...} as JSON and reads {"text": ...} back.
class HttpBackend final : public TextBackend {
 public:
  HttpBackend(std::string endpoint, std::string api_key);
  /// Reads PLANNER_ENDPOINT and PLANNER_API_KEY.
  static HttpBackend from_env();

  std::string generate(std::string_view prompt) override;

 private:
  std::string endpoint_;
  std::string api_key_;
};

template <typename Plan>
struct GenerationResult {
  Plan plan;
  ValidationReport report;
  int attempts = 0;
  std::string raw_response;
};

GenerationResult<HighLevelPlan> generate_high_level_plan(TextBackend& backend, const StoryRequest& request);

GenerationResult<FrameLevelPlan> generate_frame_plan(TextBackend& backend, const SceneOutline& scene,
                                                     int max_retries = 3, const RuleConfig& rules = {});

/// The prompt sent after a failed parse.
std::string retry_prompt(std::string_view prompt, std::string_view error_message);

}  // namespace storyweave
