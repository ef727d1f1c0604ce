// SPDX-License-Identifier: Apache-2.0

#include "storyweave/planner.hpp"

#include <algorithm>
#include <cctype>

#include "storyweave/error.hpp"
#include "storyweave/io.hpp"
#include "templates_embedded.hpp"
#include "text_util.hpp"

namespace storyweave {

std::string to_string(TemplateId id) { return id == TemplateId::HighLevel ? "high_level" : "fine_grained"; }

TemplateId parse_template_id(std::string_view text) {
  if (text == "high_level") return TemplateId::HighLevel;
  if (text == "fine_grained") return TemplateId::FineGrained;
  throw Error(ErrorCode::Format, "unknown template \"" + std::string(text) + "\"");
}

namespace {

struct Marker {
  std::size_t pos;
  std::string name;
};

std::vector<Marker> find_markers(std::string_view body) {
  std::vector<Marker> out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < body.size() && (std::islower(static_cast<unsigned char>(body[j])) || body[j] == '_')) ++j;
    if (j > i + 1 && j < body.size() && body[j] == '}') {
      out.push_back({i, std::string(body.substr(i + 1, j - i - 1))});
      i = j;
    }
  }
  return out;
}

}  // namespace

PromptTemplate PromptTemplate::from_text(TemplateId id, std::string body) {
  PromptTemplate t;
  t.id = id;
  for (const Marker& m : find_markers(body)) {
    if (std::find(t.slots.begin(), t.slots.end(), m.name) != t.slots.end()) {
      throw Error(ErrorCode::Format, "slot {" + m.name + "} appears more than once");
    }
    t.slots.push_back(m.name);
  }
  t.body = std::move(body);
  return t;
}

PromptTemplate PromptTemplate::builtin(TemplateId id) {
  return from_text(id, id == TemplateId::HighLevel ? detail::kHighLevelTemplate : detail::kFineGrainedTemplate);
}

std::string render_prompt(const PromptTemplate& tmpl, const SlotMap& slots) {
  for (const std::string& name : tmpl.slots) {
    auto it = slots.find(name);
    if (it == slots.end()) throw Error(ErrorCode::MissingSlot, "slot {" + name + "} was not provided");
    if (detail::trim(it->second).empty()) throw Error(ErrorCode::EmptySlot, "slot {" + name + "} is empty");
  }
  std::string out;
  std::size_t cursor = 0;
  for (const Marker& m : find_markers(tmpl.body)) {
    out.append(tmpl.body, cursor, m.pos - cursor);
    out += slots.at(m.name);
    cursor = m.pos + m.name.size() + 2;
  }
  out.append(tmpl.body, cursor);
  return out;
}

SlotMap extract_slots(const PromptTemplate& tmpl, std::string_view rendered) {
  const auto markers = find_markers(tmpl.body);
  SlotMap out;
  std::size_t body_pos = 0;
  std::size_t text_pos = 0;
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const std::string_view literal = std::string_view(tmpl.body).substr(body_pos, markers[i].pos - body_pos);
    if (rendered.substr(text_pos, literal.size()) != literal) {
      throw Error(ErrorCode::Format, "rendered text does not match the template before {" + markers[i].name + "}");
    }
    text_pos += literal.size();
    body_pos = markers[i].pos + markers[i].name.size() + 2;
    const std::size_t next_marker = i + 1 < markers.size() ? markers[i + 1].pos : tmpl.body.size();
    const std::string_view following = std::string_view(tmpl.body).substr(body_pos, next_marker - body_pos);
    std::size_t end;
    if (i + 1 == markers.size()) {
      if (rendered.size() < text_pos + following.size()) throw Error(ErrorCode::Format, "rendered text is truncated");
      end = rendered.size() - following.size();
    } else {
      end = following.empty() ? std::string_view::npos : rendered.find(following, text_pos);
    }
    if (end == std::string_view::npos || end < text_pos) {
      throw Error(ErrorCode::Format, "cannot locate the end of slot {" + markers[i].name + "}");
    }
    out[markers[i].name] = std::string(rendered.substr(text_pos, end - text_pos));
    text_pos = end;
  }
  if (rendered.substr(text_pos) != std::string_view(tmpl.body).substr(body_pos)) {
    throw Error(ErrorCode::Format, "rendered text does not match the template tail");
  }
  return out;
}

SlotMap scene_slots(const SceneOutline& scene) {
  std::string motions;
  for (std::size_t i = 0; i < scene.motions.size(); ++i) {
    if (i) motions += ", ";
    motions += scene.motions[i];
  }
  return SlotMap{{"motions", motions}, {"narration", scene.narration}};
}

ReplayBackend::ReplayBackend(std::vector<std::string> responses) : responses_(std::move(responses)) {}

ReplayBackend ReplayBackend::from_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw Error(ErrorCode::Io, "replay directory " + dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> responses;
  for (const auto& f : files) responses.push_back(read_file(f.string()));
  return ReplayBackend(std::move(responses));
}

std::string ReplayBackend::generate(std::string_view prompt) {
  if (prompts_.size() >= responses_.size()) {
    throw Error(ErrorCode::BackendError, "replay backend has no response left (call " +
                                             std::to_string(prompts_.size() + 1) + ")");
  }
  prompts_.emplace_back(prompt);
  return responses_[prompts_.size() - 1];
}

std::string retry_prompt(std::string_view prompt, std::string_view error_message) {
  std::string out(prompt);
  if (!out.empty() && out.back() != '\n') out += '\n';
  out += "\nYour previous answer could not be parsed: ";
  out += error_message;
  out += "\nAnswer again, following the output format exactly.\n";
  return out;
}

namespace {

template <typename Plan, typename ParseFn, typename ValidateFn>
GenerationResult<Plan> generate_with_retry(TextBackend& backend, const std::string& prompt, int max_retries,
                                           ParseFn&& parse, ValidateFn&& validate) {
  std::string last_error = "no attempt made";
  std::string current = prompt;
  const int attempts = 1 + std::max(max_retries, 0);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    std::string raw = backend.generate(current);
    try {
      GenerationResult<Plan> result;
      result.plan = parse(raw);
      result.report = validate(result.plan);
      result.attempts = attempt;
      result.raw_response = std::move(raw);
      return result;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BackendError) throw;
      last_error = e.what();
    }
    current = retry_prompt(prompt, last_error);
  }
  throw Error(ErrorCode::ExhaustedRetries,
              "no parseable answer after " + std::to_string(attempts) + " attempts; last error: " + last_error);
}

}  // namespace

GenerationResult<HighLevelPlan> generate_high_level_plan(TextBackend& backend, const StoryRequest& request) {
  SlotMap slots;
  if (request.topic) slots["topic"] = *request.topic;
  const std::string prompt = render_prompt(PromptTemplate::builtin(TemplateId::HighLevel), slots);
  return generate_with_retry<HighLevelPlan>(
      backend, prompt, request.max_retries, [](std::string_view raw) { return parse_high_level_plan(raw); },
      [](const HighLevelPlan& plan) { return validate_high_level_plan(plan); });
}

GenerationResult<FrameLevelPlan> generate_frame_plan(TextBackend& backend, const SceneOutline& scene, int max_retries,
                                                     const RuleConfig& rules) {
  const std::string prompt = render_prompt(PromptTemplate::builtin(TemplateId::FineGrained), scene_slots(scene));
  return generate_with_retry<FrameLevelPlan>(
      backend, prompt, max_retries, [](std::string_view raw) { return parse_frame_plan(raw); },
      [&](const FrameLevelPlan& plan) { return validate_frame_plan(plan, rules); });
}

}  // namespace storyweave
