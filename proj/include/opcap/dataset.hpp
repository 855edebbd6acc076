#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace opcap {

/// A scene-graph triplet in label form, as stored on disk.
struct TripletLabel {
  std::string subject;
  std::string relationship;
  std::string object;

  auto operator<=>(const TripletLabel&) const = default;
};

using TripletSet = std::set<TripletLabel>;

std::string to_string(const TripletLabel& t);

/// A scene-graph triplet mapped through a Vocabulary.
struct SceneGraphTriplet {
  int subject = 0;
  int relationship = 0;
  int object = 0;

  auto operator<=>(const SceneGraphTriplet&) const = default;
};

enum class Viewpoint { first_person, third_person };
enum class Split { train, dev, test };
enum class TargetMode { all, diff };

std::string_view to_string(Viewpoint v);
std::string_view to_string(Split s);
std::string_view to_string(TargetMode m);
Viewpoint parse_viewpoint(std::string_view s);
Split parse_split(std::string_view s);
TargetMode parse_target_mode(std::string_view s);

/// One (current state, target state, caption) record.
///
/// Image references are paths relative to the directory holding the record
/// file. object_hint is kept for bookkeeping only; the model never sees it.
struct StatePairSample {
  std::string id;
  std::string image_a;
  std::string image_b;
  Viewpoint viewpoint = Viewpoint::third_person;
  std::string object_hint;
  std::string caption;
  TripletSet graphs_a;
  TripletSet graphs_b;

  bool operator==(const StatePairSample&) const = default;
};

struct DatasetSplit {
  std::filesystem::path base_dir;  // image references resolve against this
  std::vector<StatePairSample> samples;

  std::filesystem::path resolve(const std::string& image_ref) const { return base_dir / image_ref; }
};

enum class PosTag { noun, verb, aux_verb, other };
std::string_view to_string(PosTag t);
PosTag parse_pos_tag(std::string_view s);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary();

  /// Appends a token if absent; returns its id either way.
  int add(std::string_view token);
  /// Id for the token, or kUnk.
  int id(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void set_pos(std::string_view token, PosTag tag);
  PosTag pos(int id) const;
  bool has_pos_tags() const { return has_pos_; }

  /// One token per line in id order, with a tab-separated POS column when tags are present.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  /// SHA-256 over the token list; POS tags do not participate.
  std::string hash() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int, StringHash, std::equal_to<>> index_;
  std::vector<PosTag> pos_;
  bool has_pos_ = false;
};

/// Lowercases and splits on anything that is not a word character.
/// Punctuation separates tokens and is dropped.
std::vector<std::string> normalize_caption(std::string_view text);

/// Caption tokens (frequency >= min_count) plus every scene-graph label.
/// Ordered by total frequency descending, then lexicographically.
Vocabulary build_vocabulary(const std::vector<StatePairSample>& samples, int min_count);

/// [BOS, tokens..., EOS, PAD...] of exactly max_len ids; EOS survives truncation.
std::vector<int> tokenize_caption(std::string_view text, const Vocabulary& vocab, int max_len);

/// Drops PAD/BOS/EOS (stopping at the first EOS) and joins with single spaces.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);
std::vector<std::string> ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab);

SceneGraphTriplet encode_triplet(const TripletLabel& t, const Vocabulary& vocab);

/// Auxiliary supervision: canonical-ordered flat [s,r,o,...,EOS,PAD...] of length 3*max_triplets+1.
/// `all` uses graphs_a ∪ graphs_b, `diff` the symmetric difference.
std::vector<int> scene_graph_targets(const StatePairSample& sample, TargetMode mode, const Vocabulary& vocab,
                                     int max_triplets);

/// Label-level target set before id mapping.
TripletSet target_triplets(const TripletSet& graphs_a, const TripletSet& graphs_b, TargetMode mode);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
};

struct SplitRatios {
  double train = 0.85;
  double dev = 0.05;
  double test = 0.10;
};

/// dev and test are rounded from their ratios; train takes the remainder.
SplitCounts split_counts(std::size_t total, const SplitRatios& ratios = {});

std::string record_to_json(const StatePairSample& sample);
StatePairSample record_from_json(std::string_view line);

/// `path` is either a dataset directory holding <split>.jsonl or a single record file.
DatasetSplit load_dataset(const std::filesystem::path& path, Split split);
void save_records(const std::filesystem::path& file, const std::vector<StatePairSample>& samples);
std::string serialize_records(const std::vector<StatePairSample>& samples);

/// token TAB pos per line.
std::unordered_map<std::string, PosTag> load_lexicon(const std::filesystem::path& path);
void save_lexicon(const std::filesystem::path& path, const std::vector<std::pair<std::string, PosTag>>& entries);
void apply_lexicon(Vocabulary& vocab, const std::unordered_map<std::string, PosTag>& lexicon);

}  // namespace opcap
