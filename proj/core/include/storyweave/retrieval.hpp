// SPDX-License-Identifier: Apache-2.0
//
// Motion-video retrieval: BM25 candidate pool, attribute filters, track-based
// segmentation, frame/clip similarity scoring and thresholded selection.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "storyweave/plan.hpp"

namespace storyweave {

struct VideoRecord {
  std::string id;
  std::string caption;
  double duration_s = 0.0;
  int n_frames = 0;
  int width = 0;
  int height = 0;

  bool operator==(const VideoRecord&) const = default;
};

struct TrackSpan {
  std::string record_id;
  int track_id = 0;
  int frame_start = 0;
  int frame_end = 0;  // inclusive
  std::vector<BBox> boxes;  // optional, one per frame

  bool operator==(const TrackSpan&) const = default;
};

struct ClipCandidate {
  std::string record_id;
  int track_id = 0;
  int frame_start = 0;
  int frame_end = 0;  // inclusive
  std::string caption;

  int length() const { return frame_end - frame_start + 1; }
  bool operator==(const ClipCandidate&) const = default;
};

struct ScoredClip {
  ClipCandidate clip;
  double frame_score = 0.0;
  double clip_score = 0.0;
  double avg = 0.0;

  bool operator==(const ScoredClip&) const = default;
};

enum class ThresholdMode { Average, PerScorer };

struct RetrievalConfig {
  int pool_size = 400;
  double min_duration_s = 2.0;
  int min_frames = 40;
  double min_aspect = 0.9;
  int min_clip_len_frames = 16;
  double score_threshold = 0.2;
  int max_keep = 20;
  int fallback_keep = 4;
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
  std::string query_prefix = "person is ";
  int sampled_frames = 8;
  ThresholdMode threshold_mode = ThresholdMode::Average;

  void validate() const;
};

/// Lower-cased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize_text(std::string_view text);

/// BM25 over record captions. Scores sorted descending, ties by ascending id; at most k entries.
std::vector<std::pair<std::string, double>> bm25_rank(const std::vector<VideoRecord>& corpus, std::string_view query,
                                                      int k, const RetrievalConfig& cfg = {});

std::string build_query(std::string_view motion, const RetrievalConfig& cfg = {});

std::vector<VideoRecord> filter_attributes(const std::vector<VideoRecord>& records, const RetrievalConfig& cfg = {});

/// One candidate per maximal contiguous span of each track of `record`.
std::vector<ClipCandidate> segment_clips(const VideoRecord& record, const std::vector<TrackSpan>& tracks,
                                         const RetrievalConfig& cfg = {});

class FrameScorer {
 public:
  virtual ~FrameScorer() = default;
  virtual double score(const ClipCandidate& clip, int frame_index, std::string_view query) const = 0;
};

class ClipScorer {
 public:
  virtual ~ClipScorer() = default;
  virtual double score(const ClipCandidate& clip, std::string_view query) const = 0;
};

/// |caption tokens ∩ query tokens| / |caption tokens ∪ query tokens|.
double word_overlap(std::string_view a, std::string_view b);

class WordOverlapFrameScorer final : public FrameScorer {
 public:
  double score(const ClipCandidate& clip, int frame_index, std::string_view query) const override;
};

class WordOverlapClipScorer final : public ClipScorer {
 public:
  double score(const ClipCandidate& clip, std::string_view query) const override;
};

/// Frame indices sampled uniformly over [frame_start, frame_end]; repeats when the span is short.
std::vector<int> sample_frame_indices(const ClipCandidate& clip, int count);

ScoredClip score_clip(const FrameScorer* frame_scorer, const ClipScorer* clip_scorer, const ClipCandidate& clip,
                      std::string_view query, const RetrievalConfig& cfg = {});

std::vector<ScoredClip> select_motion_videos(std::vector<ScoredClip> scored, const RetrievalConfig& cfg = {});

std::vector<ScoredClip> retrieve_motion(const std::vector<VideoRecord>& corpus, const std::vector<TrackSpan>& tracks,
                                        std::string_view motion, const FrameScorer* frame_scorer,
                                        const ClipScorer* clip_scorer, const RetrievalConfig& cfg = {});

std::vector<VideoRecord> parse_corpus_jsonl(std::string_view text);
std::string corpus_to_jsonl(const std::vector<VideoRecord>& records);
std::vector<TrackSpan> parse_tracks_jsonl(std::string_view text);
std::string tracks_to_jsonl(const std::vector<TrackSpan>& tracks);
std::string scored_clips_to_json(const std::vector<ScoredClip>& clips);
std::vector<ScoredClip> scored_clips_from_json(std::string_view text);

std::string retrieval_config_to_json(const RetrievalConfig& cfg);
RetrievalConfig retrieval_config_from_json(std::string_view text);

}  // namespace storyweave
