#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "opcap/dataset.hpp"

namespace opcap {

struct TimelineEvent {
  double timestamp = 0.0;  // seconds
  TripletLabel triplet;
  std::optional<std::array<double, 4>> rectangle;  // x, y, w, h; carried, never used
};

/// Time-stamped scene-graph annotations over one video.
///
/// An event sets the relationship between its (subject, object) pair from its
/// timestamp on. Events sharing the earliest timestamp form the initial state.
/// The timeline spans [start, end]; frames are indexed by round(t * fps).
struct AnnotationTimeline {
  double start = 0.0;
  double end = 0.0;
  double fps = 30.0;
  std::vector<TimelineEvent> events;

  std::int64_t frame_index(double t) const;
  /// Throws LoadError when timestamps decrease or the span is inverted.
  void validate() const;
};

struct StatePairCandidate {
  double time_before = 0.0;
  double time_after = 0.0;
  std::int64_t frame_before = 0;
  std::int64_t frame_after = 0;
  TripletLabel changed;
  bool operator==(const StatePairCandidate&) const = default;
};

struct ExtractionResult {
  std::vector<StatePairCandidate> pairs;
  std::vector<std::string> skipped;  // one human-readable line per skipped change
};

/// Emits a (t - margin, t + margin) frame pair for every relationship change:
/// a (subject, object) pair acquiring a different relationship, or a pair that
/// was not active before. Changes whose window leaves [start, end] are skipped.
ExtractionResult extract_state_pairs(const AnnotationTimeline& timeline, double margin);

/// {"start":0,"end":10,"fps":30,"events":[{"t":2.0,"triplet":["person","holding","fork"],"rect":[...]}]}
AnnotationTimeline parse_timeline(const std::string& json_text);
AnnotationTimeline load_timeline(const std::filesystem::path& path);

}  // namespace opcap
