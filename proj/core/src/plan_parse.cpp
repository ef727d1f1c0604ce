// SPDX-License-Identifier: Apache-2.0
//
// Parsers and emitters for the plain-text plan formats produced by the
// planning prompts.

#include <charconv>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>
#include <variant>

#include "storyweave/error.hpp"
#include "storyweave/plan.hpp"
#include "text_util.hpp"

namespace storyweave {
namespace {

using detail::istarts_with;
using detail::split_lines;
using detail::trim;

std::string line_ref(std::size_t index, std::string_view line) {
  return "line " + std::to_string(index + 1) + ": \"" + std::string(line) + "\"";
}

/// Text after the last "[Output]" marker, or all of it.
std::string_view output_section(std::string_view text) {
  constexpr std::string_view kMarker = "[Output]";
  const std::size_t pos = text.rfind(kMarker);
  if (pos == std::string_view::npos) return text;
  return text.substr(pos + kMarker.size());
}

/// Matches "<keyword>:" at the start of a line; returns the remainder.
bool match_keyword(std::string_view line, std::string_view keyword, std::string_view* rest) {
  line = trim(line);
  if (!istarts_with(line, keyword)) return false;
  std::string_view tail = trim(line.substr(keyword.size()));
  if (tail.empty() || tail.front() != ':') return false;
  *rest = trim(tail.substr(1));
  return true;
}

std::vector<std::string> split_motions(std::string_view text) {
  std::vector<std::string> motions;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = trim(text.substr(start, end - start));
    if (!item.empty()) motions.emplace_back(item);
    start = end + 1;
  }
  return motions;
}

// ---------------------------------------------------------------------------
// Bracketed list values used on Frame_k lines.

struct ListValue;
using Value = std::variant<std::string, double, std::shared_ptr<ListValue>>;
struct ListValue {
  std::vector<Value> items;
};

struct QuoteKind {
  std::string_view open;
  std::string_view close;
  bool apostrophe_like;  // closing char doubles as an apostrophe inside words
};

constexpr QuoteKind kQuotes[] = {
    {"\"", "\"", false},
    {"\xE2\x80\x9C", "\xE2\x80\x9D", false},  // curly double
    {"\xE2\x80\x9D", "\xE2\x80\x9D", false},  // stray closing curly used as opener
    {"'", "'", true},
    {"\xE2\x80\x98", "\xE2\x80\x99", true},   // curly single
    {"\xE2\x80\x99", "\xE2\x80\x99", true},
};

class ValueParser {
 public:
  explicit ValueParser(std::string_view text) : text_(text) {}

  std::vector<Value> parse_sequence() {
    std::vector<Value> items;
    skip_space();
    if (at_end()) return items;
    while (true) {
      items.push_back(parse_value());
      skip_space();
      if (at_end()) break;
      if (peek() != ',') fail("expected ','");
      ++pos_;
      skip_space();
      // tolerate a trailing comma
      if (at_end()) break;
    }
    return items;
  }

  struct Failure {
    std::string what;
  };

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }
  void skip_space() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw Failure{what + " at column " + std::to_string(pos_ + 1)};
  }

  Value parse_value() {
    skip_space();
    if (at_end()) fail("unexpected end of line");
    if (peek() == '[') return parse_list();
    for (const auto& q : kQuotes) {
      if (text_.substr(pos_).starts_with(q.open)) return parse_quoted(q);
    }
    return parse_bare();
  }

  Value parse_list() {
    ++pos_;  // '['
    auto list = std::make_shared<ListValue>();
    skip_space();
    if (!at_end() && peek() == ']') {
      ++pos_;
      return list;
    }
    while (true) {
      list->items.push_back(parse_value());
      skip_space();
      if (at_end()) fail("unterminated '['");
      if (peek() == ']') {
        ++pos_;
        return list;
      }
      if (peek() != ',') fail("expected ',' or ']'");
      ++pos_;
    }
  }

  bool closes_here(const QuoteKind& q) const {
    if (!text_.substr(pos_).starts_with(q.close)) return false;
    if (!q.apostrophe_like) return true;
    std::size_t next = pos_ + q.close.size();
    while (next < text_.size() && std::isspace(static_cast<unsigned char>(text_[next]))) ++next;
    return next >= text_.size() || text_[next] == ',' || text_[next] == ']';
  }

  Value parse_quoted(const QuoteKind& q) {
    pos_ += q.open.size();
    std::string out;
    while (true) {
      if (at_end()) fail("unterminated string");
      if (closes_here(q)) {
        pos_ += q.close.size();
        return out;
      }
      char c = peek();
      if (c == '\\' && pos_ + 1 < text_.size()) {
        out.push_back(text_[pos_ + 1]);
        pos_ += 2;
        continue;
      }
      out.push_back(c);
      ++pos_;
    }
  }

  Value parse_bare() {
    const std::size_t start = pos_;
    while (!at_end() && peek() != ',' && peek() != ']' && peek() != '[') ++pos_;
    std::string_view token = trim(text_.substr(start, pos_ - start));
    if (token.empty()) fail("empty value");
    double number = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), number);
    if (ec == std::errc() && ptr == token.data() + token.size()) return number;
    return std::string(token);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

const ListValue* as_list(const Value& v) {
  auto p = std::get_if<std::shared_ptr<ListValue>>(&v);
  return p ? p->get() : nullptr;
}

std::string normalize_field(const Value& v) {
  if (auto s = std::get_if<std::string>(&v)) return detail::normalize_spaces(*s);
  if (auto d = std::get_if<double>(&v)) return format_coordinate(*d);
  return {};
}

RegionEntry entry_from_value(const Value& v, std::size_t line_index, std::string_view line) {
  const ListValue* pair = as_list(v);
  if (pair == nullptr || pair->items.size() != 2) {
    throw Error(ErrorCode::MalformedEntry,
                "expected [[entity, motion, caption], [x0, y0, x1, y1]] on " + line_ref(line_index, line));
  }
  const ListValue* triple = as_list(pair->items[0]);
  if (triple == nullptr || triple->items.size() != 3 ||
      std::any_of(triple->items.begin(), triple->items.end(),
                  [](const Value& x) { return as_list(x) != nullptr; })) {
    throw Error(ErrorCode::MalformedEntry,
                "expected [entity, motion, caption] on " + line_ref(line_index, line));
  }
  const ListValue* box = as_list(pair->items[1]);
  if (box == nullptr || box->items.size() != 4 ||
      std::any_of(box->items.begin(), box->items.end(),
                  [](const Value& x) { return !std::holds_alternative<double>(x); })) {
    throw Error(ErrorCode::MalformedBBox, "expected four numbers on " + line_ref(line_index, line));
  }
  RegionEntry entry;
  entry.entity = normalize_field(triple->items[0]);
  entry.motion = normalize_field(triple->items[1]);
  entry.caption = normalize_field(triple->items[2]);
  if (entry.entity.empty() || entry.caption.empty()) {
    throw Error(ErrorCode::MalformedEntry, "empty entity or caption on " + line_ref(line_index, line));
  }
  if (entry.motion.empty() || detail::iequals(entry.motion, kNoMotion)) entry.motion = std::string(kNoMotion);
  entry.bbox = BBox{std::get<double>(box->items[0]), std::get<double>(box->items[1]),
                    std::get<double>(box->items[2]), std::get<double>(box->items[3])};
  return entry;
}

/// "Frame_3:", "Frame 3:", "Frame3:" -> 3.
bool match_frame_header(std::string_view line, int* index, std::string_view* rest) {
  line = trim(line);
  if (!istarts_with(line, "frame")) return false;
  std::string_view tail = line.substr(5);
  if (!tail.empty() && (tail.front() == '_' || tail.front() == ' ')) tail.remove_prefix(1);
  int value = 0;
  auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), value);
  if (ec != std::errc() || ptr == tail.data()) return false;
  tail = trim(tail.substr(static_cast<std::size_t>(ptr - tail.data())));
  if (tail.empty() || tail.front() != ':') return false;
  *index = value;
  *rest = trim(tail.substr(1));
  return true;
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string format_coordinate(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  std::string s(buf);
  const std::size_t dot = s.find('.');
  if (dot != std::string::npos) {
    std::size_t last = s.find_last_not_of('0');
    if (last == dot) last = dot + 1;
    s.erase(last + 1);
  }
  if (s == "-0.0") s = "0.0";
  return s;
}

HighLevelPlan parse_high_level_plan(std::string_view text) {
  const auto lines = split_lines(output_section(text));
  HighLevelPlan plan;

  enum class Field { None, Motions, Narration };
  Field field = Field::None;
  std::size_t header_line = 0;
  std::string motions_text;
  std::string narration;
  bool saw_motions = false;
  bool saw_narration = false;

  auto finish_scene = [&]() {
    if (plan.scenes.empty()) return;
    SceneOutline& scene = plan.scenes.back();
    if (!saw_motions || split_motions(motions_text).empty()) {
      throw Error(ErrorCode::MalformedHeader,
                  "scene " + std::to_string(plan.scenes.size()) + " has no motions (" +
                      line_ref(header_line, lines[header_line]) + ")");
    }
    scene.motions = split_motions(motions_text);
    scene.narration = detail::normalize_spaces(narration);
    if (!saw_narration || scene.narration.empty()) {
      throw Error(ErrorCode::MissingNarration,
                  "scene " + std::to_string(plan.scenes.size()) + " has no narration (" +
                      line_ref(header_line, lines[header_line]) + ")");
    }
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = trim(lines[i]);
    std::string_view rest;
    if (istarts_with(line, "scene") && line.size() > 5 &&
        (std::isspace(static_cast<unsigned char>(line[5])) || std::isdigit(static_cast<unsigned char>(line[5])))) {
      std::string_view tail = trim(line.substr(5));
      int number = 0;
      auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), number);
      std::string_view after = ec == std::errc() ? trim(tail.substr(static_cast<std::size_t>(ptr - tail.data())))
                                                 : std::string_view{};
      if (ec != std::errc() || after.empty() || after.front() != ':' || trim(after.substr(1)).empty()) {
        throw Error(ErrorCode::MalformedHeader, "expected \"Scene <n>: <name>\" on " + line_ref(i, lines[i]));
      }
      finish_scene();
      plan.scenes.push_back(SceneOutline{std::string(trim(after.substr(1))), {}, {}});
      header_line = i;
      field = Field::None;
      motions_text.clear();
      narration.clear();
      saw_motions = saw_narration = false;
      continue;
    }
    if (plan.scenes.empty()) continue;
    if (match_keyword(line, "motions", &rest) || match_keyword(line, "motion", &rest)) {
      field = Field::Motions;
      saw_motions = true;
      motions_text = std::string(rest);
      continue;
    }
    if (match_keyword(line, "narration", &rest)) {
      field = Field::Narration;
      saw_narration = true;
      narration = std::string(rest);
      continue;
    }
    if (line.empty() || line.front() == '[') {
      field = Field::None;
      continue;
    }
    if (field == Field::Motions) {
      if (!motions_text.empty()) motions_text += ", ";
      motions_text += std::string(line);
    } else if (field == Field::Narration) {
      if (!narration.empty()) narration += ' ';
      narration += std::string(line);
    }
  }
  if (plan.scenes.empty()) throw Error(ErrorCode::MissingScene, "no \"Scene <n>: <name>\" header found");
  finish_scene();
  return plan;
}

std::string emit_high_level_plan(const HighLevelPlan& plan) {
  std::ostringstream out;
  out << "[Output]\n";
  for (std::size_t i = 0; i < plan.scenes.size(); ++i) {
    const SceneOutline& s = plan.scenes[i];
    if (i > 0) out << '\n';
    out << "Scene " << (i + 1) << ": " << s.scene_name << '\n';
    out << "Motions:\n";
    for (std::size_t m = 0; m < s.motions.size(); ++m) out << (m ? ", " : "") << s.motions[m];
    out << "\nNarration:\n" << s.narration << '\n';
  }
  return out.str();
}

FrameLevelPlan parse_frame_plan(std::string_view text) {
  const auto lines = split_lines(output_section(text));
  FrameLevelPlan plan;
  bool have_background = false;
  std::map<int, std::vector<RegionEntry>> frames;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view rest;
    int index = 0;
    if (!have_background && match_keyword(lines[i], "background", &rest)) {
      plan.background = detail::normalize_spaces(rest);
      have_background = true;
      continue;
    }
    if (!match_frame_header(lines[i], &index, &rest)) continue;
    if (index < 1 || index > static_cast<int>(kKeyFrameCount)) {
      throw Error(ErrorCode::MalformedEntry, "frame index out of 1..6 on " + line_ref(i, lines[i]));
    }
    if (frames.contains(index)) {
      throw Error(ErrorCode::MalformedEntry, "duplicate frame on " + line_ref(i, lines[i]));
    }
    std::vector<Value> values;
    try {
      values = ValueParser(rest).parse_sequence();
    } catch (const ValueParser::Failure& f) {
      throw Error(ErrorCode::MalformedEntry, f.what + " on " + line_ref(i, lines[i]));
    }
    std::vector<RegionEntry> entries;
    entries.reserve(values.size());
    for (const Value& v : values) entries.push_back(entry_from_value(v, i, lines[i]));
    frames.emplace(index, std::move(entries));
  }

  if (!have_background || plan.background.empty()) {
    throw Error(ErrorCode::MissingBackground, "no non-empty \"Background:\" line");
  }
  for (int k = 1; k <= static_cast<int>(kKeyFrameCount); ++k) {
    auto it = frames.find(k);
    if (it == frames.end()) throw Error(ErrorCode::MissingFrame, "Frame_" + std::to_string(k));
    plan.key_frames.push_back(std::move(it->second));
  }
  return plan;
}

std::string emit_frame_plan(const FrameLevelPlan& plan) {
  std::ostringstream out;
  out << "Background: " << plan.background << '\n';
  for (std::size_t k = 0; k < plan.key_frames.size(); ++k) {
    out << "Frame_" << (k + 1) << ":";
    const auto& entries = plan.key_frames[k];
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const RegionEntry& r = entries[e];
      out << (e ? ", " : " ") << "[[" << quote(r.entity) << ", " << quote(r.motion) << ", " << quote(r.caption)
          << "], [" << format_coordinate(r.bbox.x0) << ", " << format_coordinate(r.bbox.y0) << ", "
          << format_coordinate(r.bbox.x1) << ", " << format_coordinate(r.bbox.y1) << "]]";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace storyweave
