#include "opcap/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "opcap/image.hpp"
#include "opcap/util.hpp"

namespace opcap {

using json = nlohmann::ordered_json;

namespace {

const char* const kReservedTokens[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

const char* const kRecordFields[] = {"id",          "image_a", "image_b",  "viewpoint",
                                     "object_hint", "caption", "graphs_a", "graphs_b"};

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

TripletSet triplets_from_json(const json& arr, const char* field) {
  if (!arr.is_array()) throw LoadError(std::string(field) + " must be an array");
  TripletSet out;
  for (const auto& t : arr) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string()) {
      throw LoadError(std::string(field) + " entries must be [subject, relationship, object] strings");
    }
    TripletLabel label{t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()};
    if (!out.insert(label).second) {
      throw LoadError(std::string(field) + " has duplicate triplet " + to_string(label));
    }
  }
  return out;
}

json triplets_to_json(const TripletSet& set) {
  json arr = json::array();
  for (const auto& t : set) arr.push_back(json::array({t.subject, t.relationship, t.object}));
  return arr;
}

}  // namespace

std::string to_string(const TripletLabel& t) { return t.subject + "-" + t.relationship + "-" + t.object; }

std::string_view to_string(Viewpoint v) { return v == Viewpoint::first_person ? "first_person" : "third_person"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

std::string_view to_string(TargetMode m) { return m == TargetMode::all ? "all" : "diff"; }

Viewpoint parse_viewpoint(std::string_view s) {
  if (s == "first_person") return Viewpoint::first_person;
  if (s == "third_person") return Viewpoint::third_person;
  throw LoadError("unknown viewpoint '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

TargetMode parse_target_mode(std::string_view s) {
  if (s == "all") return TargetMode::all;
  if (s == "diff") return TargetMode::diff;
  throw ConfigError("unknown scene-graph target mode '" + std::string(s) + "'");
}

std::string_view to_string(PosTag t) {
  switch (t) {
    case PosTag::noun: return "noun";
    case PosTag::verb: return "verb";
    case PosTag::aux_verb: return "aux_verb";
    case PosTag::other: return "other";
  }
  return "other";
}

PosTag parse_pos_tag(std::string_view s) {
  if (s == "noun") return PosTag::noun;
  if (s == "verb") return PosTag::verb;
  if (s == "aux_verb") return PosTag::aux_verb;
  if (s == "other") return PosTag::other;
  throw LoadError("unknown POS tag '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (const char* t : kReservedTokens) add(t);
}

int Vocabulary::add(std::string_view token) {
  if (auto found = find(token)) return *found;
  const int id = size();
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  pos_.push_back(PosTag::other);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ShapeError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::set_pos(std::string_view token, PosTag tag) {
  auto found = find(token);
  if (!found) return;
  pos_[static_cast<std::size_t>(*found)] = tag;
  has_pos_ = true;
}

PosTag Vocabulary::pos(int id) const {
  if (id < 0 || id >= size()) return PosTag::other;
  return pos_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (int i = 0; i < size(); ++i) {
    out += tokens_[static_cast<std::size_t>(i)];
    if (has_pos_) {
      out += '\t';
      out += to_string(pos_[static_cast<std::size_t>(i)]);
    }
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary vocab;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string token = line;
    std::optional<PosTag> tag;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      token = line.substr(0, tab);
      tag = parse_pos_tag(line.substr(tab + 1));
    }
    if (token.empty()) throw LoadError("vocabulary line " + std::to_string(line_no + 1) + " is empty");
    if (line_no < kReserved) {
      if (token != kReservedTokens[line_no]) {
        throw LoadError("vocabulary line " + std::to_string(line_no + 1) + " must be " + kReservedTokens[line_no]);
      }
    } else if (vocab.contains(token)) {
      throw LoadError("vocabulary token '" + token + "' repeated");
    } else {
      vocab.add(token);
    }
    if (tag) vocab.set_pos(token, *tag);
    ++line_no;
  }
  if (line_no < kReserved) throw LoadError("vocabulary is missing reserved tokens");
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const { write_text_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return sha256_hex(joined);
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> normalize_caption(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary build_vocabulary(const std::vector<StatePairSample>& samples, int min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  if (samples.empty()) throw LoadError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, long> caption_counts;
  std::map<std::string, long> total_counts;
  std::set<std::string> graph_labels;
  for (const auto& s : samples) {
    for (auto& t : normalize_caption(s.caption)) {
      ++caption_counts[t];
      ++total_counts[t];
    }
    for (const auto* graphs : {&s.graphs_a, &s.graphs_b}) {
      for (const auto& t : *graphs) {
        for (const auto* label : {&t.subject, &t.relationship, &t.object}) {
          graph_labels.insert(*label);
          ++total_counts[*label];
        }
      }
    }
  }

  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [token, count] : total_counts) {
    const auto cap = caption_counts.find(token);
    const bool frequent_caption_token = cap != caption_counts.end() && cap->second >= min_count;
    if (frequent_caption_token || graph_labels.contains(token)) kept.emplace_back(token, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  for (const auto& [token, count] : kept) {
    if (vocab.contains(token)) throw LoadError("token '" + token + "' collides with a reserved token");
    vocab.add(token);
  }
  return vocab;
}

std::vector<int> tokenize_caption(std::string_view text, const Vocabulary& vocab, int max_len) {
  if (max_len < 3) throw ConfigError("max_len must be >= 3");
  const auto tokens = normalize_caption(text);
  std::vector<int> ids(static_cast<std::size_t>(max_len), Vocabulary::kPad);
  ids[0] = Vocabulary::kBos;
  const std::size_t content = std::min(tokens.size(), static_cast<std::size_t>(max_len - 2));
  for (std::size_t i = 0; i < content; ++i) ids[i + 1] = vocab.id(tokens[i]);
  ids[content + 1] = Vocabulary::kEos;
  return ids;
}

std::vector<std::string> ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kPad || id == Vocabulary::kBos) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (const auto& t : ids_to_tokens(ids, vocab)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

SceneGraphTriplet encode_triplet(const TripletLabel& t, const Vocabulary& vocab) {
  return {vocab.id(t.subject), vocab.id(t.relationship), vocab.id(t.object)};
}

TripletSet target_triplets(const TripletSet& graphs_a, const TripletSet& graphs_b, TargetMode mode) {
  TripletSet out;
  if (mode == TargetMode::all) {
    std::set_union(graphs_a.begin(), graphs_a.end(), graphs_b.begin(), graphs_b.end(),
                   std::inserter(out, out.end()));
  } else {
    std::set_symmetric_difference(graphs_a.begin(), graphs_a.end(), graphs_b.begin(), graphs_b.end(),
                                  std::inserter(out, out.end()));
  }
  return out;
}

std::vector<int> scene_graph_targets(const StatePairSample& sample, TargetMode mode, const Vocabulary& vocab,
                                     int max_triplets) {
  if (max_triplets < 1) throw ConfigError("max_triplets must be >= 1");
  std::set<SceneGraphTriplet> ordered;
  for (const auto& t : target_triplets(sample.graphs_a, sample.graphs_b, mode)) {
    ordered.insert(encode_triplet(t, vocab));
  }
  std::vector<int> out(static_cast<std::size_t>(3 * max_triplets + 1), Vocabulary::kPad);
  std::size_t pos = 0;
  for (const auto& t : ordered) {
    if (pos / 3 >= static_cast<std::size_t>(max_triplets)) break;
    out[pos++] = t.subject;
    out[pos++] = t.relationship;
    out[pos++] = t.object;
  }
  out[pos] = Vocabulary::kEos;
  return out;
}

SplitCounts split_counts(std::size_t total, const SplitRatios& ratios) {
  const double sum = ratios.train + ratios.dev + ratios.test;
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 || std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  SplitCounts c;
  c.dev = static_cast<std::size_t>(std::llround(static_cast<double>(total) * ratios.dev));
  c.test = static_cast<std::size_t>(std::llround(static_cast<double>(total) * ratios.test));
  if (c.dev + c.test > total) c.test = total - c.dev;
  c.train = total - c.dev - c.test;
  return c;
}

// ---------------------------------------------------------------------------
// Record files

std::string record_to_json(const StatePairSample& s) {
  json j;
  j["id"] = s.id;
  j["image_a"] = s.image_a;
  j["image_b"] = s.image_b;
  j["viewpoint"] = std::string(to_string(s.viewpoint));
  j["object_hint"] = s.object_hint;
  j["caption"] = s.caption;
  j["graphs_a"] = triplets_to_json(s.graphs_a);
  j["graphs_b"] = triplets_to_json(s.graphs_b);
  return j.dump();
}

StatePairSample record_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw LoadError("record is not an object");
  for (const char* field : kRecordFields) {
    if (!j.contains(field)) throw LoadError(std::string("missing field \"") + field + "\"");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(kRecordFields), std::end(kRecordFields),
                     [&](const char* f) { return key == f; }) == std::end(kRecordFields)) {
      throw LoadError("unexpected field \"" + key + "\"");
    }
  }
  auto get_string = [&](const char* field) {
    if (!j[field].is_string()) throw LoadError(std::string("field \"") + field + "\" must be a string");
    return j[field].get<std::string>();
  };
  StatePairSample s;
  s.id = get_string("id");
  s.image_a = get_string("image_a");
  s.image_b = get_string("image_b");
  s.viewpoint = parse_viewpoint(get_string("viewpoint"));
  s.object_hint = get_string("object_hint");
  s.caption = get_string("caption");
  s.graphs_a = triplets_from_json(j["graphs_a"], "graphs_a");
  s.graphs_b = triplets_from_json(j["graphs_b"], "graphs_b");
  if (normalize_caption(s.caption).empty()) throw LoadError("caption has no tokens");
  return s;
}

std::string serialize_records(const std::vector<StatePairSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += record_to_json(s);
    out += '\n';
  }
  return out;
}

void save_records(const std::filesystem::path& file, const std::vector<StatePairSample>& samples) {
  write_text_file(file, serialize_records(samples));
}

DatasetSplit load_dataset(const std::filesystem::path& path, Split split) {
  namespace fs = std::filesystem;
  fs::path file = path;
  if (fs::is_directory(path)) file = path / (std::string(to_string(split)) + ".jsonl");
  if (!fs::is_regular_file(file)) throw LoadError("dataset file not found: " + file.string());

  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError("cannot open " + file.string());
  DatasetSplit out;
  out.base_dir = file.parent_path();
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    StatePairSample s;
    try {
      s = record_from_json(line);
    } catch (const LoadError& e) {
      throw LoadError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(s.id).second) {
      throw LoadError(file.string() + ":" + std::to_string(line_no) + ": duplicate record id " + s.id);
    }
    ImageSize sizes[2];
    const std::string* refs[2] = {&s.image_a, &s.image_b};
    for (int k = 0; k < 2; ++k) {
      const auto resolved = out.resolve(*refs[k]);
      if (!fs::is_regular_file(resolved)) {
        throw LoadError("record " + s.id + ": image reference " + *refs[k] + " does not exist");
      }
      sizes[k] = read_png_size(resolved);
    }
    if (!(sizes[0] == sizes[1])) throw LoadError("record " + s.id + ": image_a and image_b differ in size");
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::unordered_map<std::string, PosTag> load_lexicon(const std::filesystem::path& path) {
  std::unordered_map<std::string, PosTag> lexicon;
  std::istringstream in(read_text_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": expected token<TAB>pos");
    }
    lexicon[line.substr(0, tab)] = parse_pos_tag(line.substr(tab + 1));
  }
  return lexicon;
}

void save_lexicon(const std::filesystem::path& path, const std::vector<std::pair<std::string, PosTag>>& entries) {
  std::string out;
  for (const auto& [token, tag] : entries) {
    out += token;
    out += '\t';
    out += to_string(tag);
    out += '\n';
  }
  write_text_file(path, out);
}

void apply_lexicon(Vocabulary& vocab, const std::unordered_map<std::string, PosTag>& lexicon) {
  for (const auto& [token, tag] : lexicon) vocab.set_pos(token, tag);
}

}  // namespace opcap
