// SPDX-License-Identifier: Apache-2.0

#include "storyweave/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "storyweave/error.hpp"
#include "text_util.hpp"

namespace storyweave {

using nlohmann::json;

void RetrievalConfig::validate() const {
  if (fallback_keep > max_keep) throw Error(ErrorCode::Format, "fallback_keep must not exceed max_keep");
  if (pool_size < 0 || max_keep < 0 || fallback_keep < 0 || sampled_frames < 1 || min_clip_len_frames < 1) {
    throw Error(ErrorCode::Format, "retrieval config holds a negative count");
  }
}

std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::pair<std::string, double>> bm25_rank(const std::vector<VideoRecord>& corpus, std::string_view query,
                                                      int k, const RetrievalConfig& cfg) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "BM25 needs at least one document");
  std::vector<std::vector<std::string>> docs;
  docs.reserve(corpus.size());
  double total_len = 0.0;
  std::unordered_map<std::string, int> doc_freq;
  for (const VideoRecord& r : corpus) {
    docs.push_back(tokenize_text(r.caption));
    total_len += static_cast<double>(docs.back().size());
    std::set<std::string> seen(docs.back().begin(), docs.back().end());
    for (const auto& term : seen) ++doc_freq[term];
  }
  const double n = static_cast<double>(corpus.size());
  const double avgdl = total_len / n;
  std::vector<std::string> terms = tokenize_text(query);

  std::vector<std::pair<std::string, double>> ranked;
  ranked.reserve(corpus.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::unordered_map<std::string, int> tf;
    for (const auto& term : docs[d]) ++tf[term];
    const double dl = static_cast<double>(docs[d].size());
    double score = 0.0;
    for (const auto& term : terms) {
      auto it = tf.find(term);
      if (it == tf.end()) continue;
      const double df = doc_freq[term];
      const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      const double f = it->second;
      const double norm = avgdl > 0.0 ? dl / avgdl : 0.0;
      score += idf * f * (cfg.bm25_k1 + 1.0) / (f + cfg.bm25_k1 * (1.0 - cfg.bm25_b + cfg.bm25_b * norm));
    }
    ranked.emplace_back(corpus[d].id, score);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (k >= 0 && ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));
  return ranked;
}

std::string build_query(std::string_view motion, const RetrievalConfig& cfg) {
  const std::string m = detail::normalize_spaces(motion);
  if (m.empty()) throw Error(ErrorCode::EmptyMotion, "motion text is empty");
  return detail::normalize_spaces(cfg.query_prefix + " " + m);
}

std::vector<VideoRecord> filter_attributes(const std::vector<VideoRecord>& records, const RetrievalConfig& cfg) {
  std::vector<VideoRecord> out;
  for (const VideoRecord& r : records) {
    if (r.duration_s < cfg.min_duration_s) continue;
    if (r.n_frames < cfg.min_frames) continue;
    if (r.height <= 0 || static_cast<double>(r.width) / static_cast<double>(r.height) < cfg.min_aspect) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<ClipCandidate> segment_clips(const VideoRecord& record, const std::vector<TrackSpan>& tracks,
                                         const RetrievalConfig& cfg) {
  std::map<int, std::vector<std::pair<int, int>>> by_track;
  for (const TrackSpan& t : tracks) {
    if (t.record_id != record.id) continue;
    const int start = std::max(t.frame_start, 0);
    const int end = std::min(t.frame_end, record.n_frames - 1);
    if (start > end) continue;
    by_track[t.track_id].emplace_back(start, end);
  }
  std::vector<ClipCandidate> out;
  for (auto& [track, spans] : by_track) {
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<int, int>> merged;
    for (const auto& s : spans) {
      if (!merged.empty() && s.first <= merged.back().second + 1) {
        merged.back().second = std::max(merged.back().second, s.second);
      } else {
        merged.push_back(s);
      }
    }
    for (const auto& [a, b] : merged) {
      if (b - a + 1 < cfg.min_clip_len_frames) continue;
      out.push_back(ClipCandidate{record.id, track, a, b, record.caption});
    }
  }
  return out;
}

double word_overlap(std::string_view a, std::string_view b) {
  const auto ta = tokenize_text(a);
  const auto tb = tokenize_text(b);
  const std::set<std::string> sa(ta.begin(), ta.end());
  const std::set<std::string> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double WordOverlapFrameScorer::score(const ClipCandidate& clip, int /*frame_index*/, std::string_view query) const {
  return word_overlap(clip.caption, query);
}

double WordOverlapClipScorer::score(const ClipCandidate& clip, std::string_view query) const {
  return word_overlap(clip.caption, query);
}

std::vector<int> sample_frame_indices(const ClipCandidate& clip, int count) {
  std::vector<int> out;
  const long long len = clip.length();
  for (int i = 0; i < count; ++i) {
    const long long off = count == 1 ? 0 : (static_cast<long long>(i) * (len - 1)) / (count - 1);
    out.push_back(clip.frame_start + static_cast<int>(off));
  }
  return out;
}

ScoredClip score_clip(const FrameScorer* frame_scorer, const ClipScorer* clip_scorer, const ClipCandidate& clip,
                      std::string_view query, const RetrievalConfig& cfg) {
  if (frame_scorer == nullptr) throw Error(ErrorCode::ScorerUnavailable, "no frame-level scorer registered");
  if (clip_scorer == nullptr) throw Error(ErrorCode::ScorerUnavailable, "no clip-level scorer registered");
  ScoredClip out;
  out.clip = clip;
  const auto frames = sample_frame_indices(clip, cfg.sampled_frames);
  double sum = 0.0;
  for (int f : frames) sum += frame_scorer->score(clip, f, query);
  out.frame_score = sum / static_cast<double>(frames.size());
  out.clip_score = clip_scorer->score(clip, query);
  out.avg = (out.frame_score + out.clip_score) / 2.0;
  return out;
}

namespace {

bool ranks_before(const ScoredClip& a, const ScoredClip& b) {
  if (a.avg != b.avg) return a.avg > b.avg;
  if (a.clip.record_id != b.clip.record_id) return a.clip.record_id < b.clip.record_id;
  if (a.clip.track_id != b.clip.track_id) return a.clip.track_id < b.clip.track_id;
  return a.clip.frame_start < b.clip.frame_start;
}

}  // namespace

std::vector<ScoredClip> select_motion_videos(std::vector<ScoredClip> scored, const RetrievalConfig& cfg) {
  std::sort(scored.begin(), scored.end(), ranks_before);
  std::vector<ScoredClip> passing;
  for (const ScoredClip& s : scored) {
    const bool ok = cfg.threshold_mode == ThresholdMode::Average
                        ? s.avg > cfg.score_threshold
                        : (s.frame_score > cfg.score_threshold && s.clip_score > cfg.score_threshold);
    if (ok) passing.push_back(s);
  }
  const auto max_keep = static_cast<std::size_t>(cfg.max_keep);
  const auto fallback = static_cast<std::size_t>(cfg.fallback_keep);
  if (passing.size() >= fallback) {
    if (passing.size() > max_keep) passing.resize(max_keep);
    return passing;
  }
  if (scored.size() > fallback) scored.resize(fallback);
  return scored;
}

std::vector<ScoredClip> retrieve_motion(const std::vector<VideoRecord>& corpus, const std::vector<TrackSpan>& tracks,
                                        std::string_view motion, const FrameScorer* frame_scorer,
                                        const ClipScorer* clip_scorer, const RetrievalConfig& cfg) {
  cfg.validate();
  const std::string query = build_query(motion, cfg);
  if (corpus.empty()) return {};
  const auto ranked = bm25_rank(corpus, query, cfg.pool_size, cfg);
  std::unordered_map<std::string, const VideoRecord*> by_id;
  for (const VideoRecord& r : corpus) by_id.emplace(r.id, &r);
  std::vector<VideoRecord> pool;
  for (const auto& [id, score] : ranked) {
    if (score > 0.0) pool.push_back(*by_id.at(id));
  }
  const auto kept = filter_attributes(pool, cfg);
  std::vector<ScoredClip> scored;
  for (const VideoRecord& r : kept) {
    for (const ClipCandidate& c : segment_clips(r, tracks, cfg)) {
      scored.push_back(score_clip(frame_scorer, clip_scorer, c, query, cfg));
    }
  }
  return select_motion_videos(std::move(scored), cfg);
}

namespace {

template <typename Fn>
void for_each_json_line(std::string_view text, const char* what, Fn&& fn) {
  int line_no = 0;
  for (std::string_view raw : detail::split_lines(text)) {
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Format, std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

json record_json(const VideoRecord& r) {
  return json{{"id", r.id},           {"caption", r.caption}, {"duration_s", r.duration_s},
              {"n_frames", r.n_frames}, {"width", r.width},     {"height", r.height}};
}

json clip_json(const ClipCandidate& c) {
  return json{{"record_id", c.record_id}, {"track_id", c.track_id}, {"frame_start", c.frame_start},
              {"frame_end", c.frame_end},  {"caption", c.caption}};
}

}  // namespace

std::vector<VideoRecord> parse_corpus_jsonl(std::string_view text) {
  std::vector<VideoRecord> out;
  for_each_json_line(text, "corpus", [&](const json& j) {
    VideoRecord r;
    const json& id = j.at("id");
    r.id = id.is_string() ? id.get<std::string>() : id.dump();
    r.caption = j.at("caption").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    r.n_frames = j.at("n_frames").get<int>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    if (r.duration_s <= 0.0 || r.n_frames < 1 || r.width < 1 || r.height < 1) {
      throw Error(ErrorCode::Format, "record " + r.id + " has non-positive attributes");
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::string corpus_to_jsonl(const std::vector<VideoRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_json(r).dump() + "\n";
  return out;
}

std::vector<TrackSpan> parse_tracks_jsonl(std::string_view text) {
  std::vector<TrackSpan> out;
  for_each_json_line(text, "tracks", [&](const json& j) {
    TrackSpan t;
    const json& id = j.at("record_id");
    t.record_id = id.is_string() ? id.get<std::string>() : id.dump();
    t.track_id = j.value("track_id", 0);
    t.frame_start = j.at("frame_start").get<int>();
    t.frame_end = j.at("frame_end").get<int>();
    if (t.frame_start > t.frame_end) throw Error(ErrorCode::Format, "track span ends before it starts");
    if (j.contains("boxes")) {
      for (const json& b : j.at("boxes")) t.boxes.push_back(BBox{b.at(0), b.at(1), b.at(2), b.at(3)});
    }
    out.push_back(std::move(t));
  });
  return out;
}

std::string tracks_to_jsonl(const std::vector<TrackSpan>& tracks) {
  std::string out;
  for (const auto& t : tracks) {
    json j{{"record_id", t.record_id}, {"track_id", t.track_id}, {"frame_start", t.frame_start}, {"frame_end", t.frame_end}};
    if (!t.boxes.empty()) {
      json boxes = json::array();
      for (const BBox& b : t.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
      j["boxes"] = boxes;
    }
    out += j.dump() + "\n";
  }
  return out;
}

std::string scored_clips_to_json(const std::vector<ScoredClip>& clips) {
  json arr = json::array();
  for (const auto& s : clips) {
    arr.push_back({{"clip", clip_json(s.clip)}, {"frame_score", s.frame_score}, {"clip_score", s.clip_score}, {"avg", s.avg}});
  }
  return arr.dump(2);
}

std::vector<ScoredClip> scored_clips_from_json(std::string_view text) {
  try {
    std::vector<ScoredClip> out;
    for (const json& j : json::parse(text)) {
      ScoredClip s;
      const json& c = j.at("clip");
      s.clip = ClipCandidate{c.at("record_id"), c.at("track_id"), c.at("frame_start"), c.at("frame_end"), c.at("caption")};
      s.frame_score = j.at("frame_score");
      s.clip_score = j.at("clip_score");
      s.avg = j.at("avg");
      out.push_back(std::move(s));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("scored clips: ") + e.what());
  }
}

std::string retrieval_config_to_json(const RetrievalConfig& c) {
  return json{{"pool_size", c.pool_size},
              {"min_duration_s", c.min_duration_s},
              {"min_frames", c.min_frames},
              {"min_aspect", c.min_aspect},
              {"min_clip_len_frames", c.min_clip_len_frames},
              {"score_threshold", c.score_threshold},
              {"max_keep", c.max_keep},
              {"fallback_keep", c.fallback_keep},
              {"bm25_k1", c.bm25_k1},
              {"bm25_b", c.bm25_b},
              {"query_prefix", c.query_prefix},
              {"sampled_frames", c.sampled_frames},
              {"threshold_mode", c.threshold_mode == ThresholdMode::Average ? "average" : "per_scorer"}}
      .dump(2);
}

RetrievalConfig retrieval_config_from_json(std::string_view text) {
  RetrievalConfig c;
  try {
    const json j = json::parse(text);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.min_duration_s = j.value("min_duration_s", c.min_duration_s);
    c.min_frames = j.value("min_frames", c.min_frames);
    c.min_aspect = j.value("min_aspect", c.min_aspect);
    c.min_clip_len_frames = j.value("min_clip_len_frames", c.min_clip_len_frames);
    c.score_threshold = j.value("score_threshold", c.score_threshold);
    c.max_keep = j.value("max_keep", c.max_keep);
    c.fallback_keep = j.value("fallback_keep", c.fallback_keep);
    c.bm25_k1 = j.value("bm25_k1", c.bm25_k1);
    c.bm25_b = j.value("bm25_b", c.bm25_b);
    c.query_prefix = j.value("query_prefix", c.query_prefix);
    c.sampled_frames = j.value("sampled_frames", c.sampled_frames);
    const std::string mode = j.value("threshold_mode", std::string("average"));
    if (mode == "average") {
      c.threshold_mode = ThresholdMode::Average;
    } else if (mode == "per_scorer") {
      c.threshold_mode = ThresholdMode::PerScorer;
    } else {
      throw Error(ErrorCode::Format, "unknown threshold_mode \"" + mode + "\"");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("retrieval config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace storyweave
