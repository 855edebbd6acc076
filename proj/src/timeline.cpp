#include "opcap/timeline.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <utility>

#include "opcap/util.hpp"

namespace opcap {

std::int64_t AnnotationTimeline::frame_index(double t) const { return std::llround(t * fps); }

void AnnotationTimeline::validate() const {
  if (!(fps > 0)) throw LoadError("timeline fps must be positive");
  if (end < start) throw LoadError("timeline end precedes start");
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].timestamp < events[i - 1].timestamp) {
      throw LoadError("timeline timestamps decrease at event " + std::to_string(i));
    }
  }
}

ExtractionResult extract_state_pairs(const AnnotationTimeline& timeline, double margin) {
  if (!(margin > 0)) throw ConfigError("margin must be positive");
  timeline.validate();

  ExtractionResult result;
  std::map<std::pair<std::string, std::string>, std::string> active;
  const auto& events = timeline.events;
  std::size_t i = 0;
  bool initial = true;
  while (i < events.size()) {
    const double t = events[i].timestamp;
    std::size_t j = i;
    // Several events may share a timestamp; only the resulting state counts.
    auto next = active;
    std::map<std::pair<std::string, std::string>, bool> touched;
    for (; j < events.size() && events[j].timestamp == t; ++j) {
      const auto& tr = events[j].triplet;
      const auto key = std::make_pair(tr.subject, tr.object);
      next[key] = tr.relationship;
      touched[key] = true;
    }
    std::vector<TripletLabel> changed;
    if (!initial) {
      for (const auto& [key, unused] : touched) {
        const auto before = active.find(key);
        const auto& rel = next[key];
        if (before == active.end() || before->second != rel) changed.push_back({key.first, rel, key.second});
      }
    }
    active = std::move(next);
    for (const auto& tr : changed) {
      const double lo = t - margin;
      const double hi = t + margin;
      if (lo < timeline.start || hi > timeline.end) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", t);
        result.skipped.push_back(std::string("t=") + buf + " " + to_string(tr) + " window outside timeline");
        continue;
      }
      result.pairs.push_back({lo, hi, timeline.frame_index(lo), timeline.frame_index(hi), tr});
    }
    initial = false;
    i = j;
  }
  return result;
}

AnnotationTimeline parse_timeline(const std::string& json_text) {
  using json = nlohmann::json;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("timeline: invalid JSON: ") + e.what());
  }
  AnnotationTimeline tl;
  try {
    tl.fps = j.value("fps", 30.0);
    tl.start = j.value("start", 0.0);
    const auto& events = j.at("events");
    for (const auto& e : events) {
      TimelineEvent ev;
      ev.timestamp = e.at("t").get<double>();
      const auto& tr = e.at("triplet");
      if (!tr.is_array() || tr.size() != 3) throw LoadError("timeline triplet must have 3 labels");
      ev.triplet = {tr[0].get<std::string>(), tr[1].get<std::string>(), tr[2].get<std::string>()};
      if (e.contains("rect")) {
        const auto& r = e["rect"];
        if (!r.is_array() || r.size() != 4) throw LoadError("timeline rect must have 4 numbers");
        ev.rectangle = std::array<double, 4>{r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                                             r[3].get<double>()};
      }
      tl.events.push_back(std::move(ev));
    }
    tl.end = j.contains("end") ? j["end"].get<double>() : (tl.events.empty() ? tl.start : tl.events.back().timestamp);
  } catch (const json::exception& e) {
    throw LoadError(std::string("timeline: ") + e.what());
  }
  tl.validate();
  return tl;
}

AnnotationTimeline load_timeline(const std::filesystem::path& path) { return parse_timeline(read_text_file(path)); }

}  // namespace opcap
