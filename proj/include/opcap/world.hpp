#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opcap/dataset.hpp"
#include "opcap/image.hpp"
#include "opcap/util.hpp"

namespace opcap::world {

/// Raised when an action's preconditions do not hold in the scene.
class ActionError : public Error {
 public:
  using Error::Error;
};

enum class Verb { take, put, open, close, move, wash, hang, remove };
inline constexpr std::array<Verb, 8> kAllVerbs = {Verb::take, Verb::put,  Verb::open, Verb::close,
                                                  Verb::move, Verb::wash, Verb::hang, Verb::remove};

std::string_view to_string(Verb v);
Verb parse_verb(std::string_view s);
/// Relationship label of the event triplet, e.g. "putting".
std::string_view event_relationship(Verb v);

struct ObjectClass {
  std::string name;
  bool portable = false;
  bool openable = false;
  bool washable = false;
  bool hangable = false;
};

const std::vector<ObjectClass>& object_classes();
const ObjectClass& object_class(std::string_view name);

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

struct SceneObject {
  std::string cls;
  int color = 0;
  Cell cell;
  bool open = false;   // openable classes only
  bool dirty = false;  // washable classes only
  bool hung = false;   // hangable classes only
  bool operator==(const SceneObject&) const = default;
};

struct Agent {
  Cell cell;
  std::optional<SceneObject> held;  // held objects are off the grid; cell is ignored
  bool operator==(const Agent&) const = default;
};

struct Scene {
  int width = 8;
  int height = 8;
  std::vector<SceneObject> objects;
  Agent agent;

  const SceneObject* object_at(Cell c) const;
  bool occupied(Cell c) const;
  bool operator==(const Scene&) const = default;
};

/// Horizontal bands of the grid: shelf, table, counter, floor.
std::string_view region_name(const Scene& scene, Cell c);

struct ActionSpec {
  Verb verb = Verb::take;
  std::string object;                   // target object class
  std::optional<Cell> source;           // grid position the target is taken from / acted on
  std::optional<Cell> destination;      // grid position for put, hang and move
  std::string source_region;            // descriptors for captions
  std::string destination_region;
  bool operator==(const ActionSpec&) const = default;
};

struct GeneratorConfig {
  int grid_width = 8;
  int grid_height = 8;
  int resolution = 64;  // image width in pixels; multiple of grid_width
  // Objects placed on the grid; a held object, if any, is extra.
  int min_objects = 2;
  int max_objects = 4;
  double hold_probability = 0.5;
  std::vector<std::string> object_classes;  // empty = all known classes
  std::vector<std::string> verbs;           // empty = all verbs
  int count = 1000;
  std::uint64_t seed = 1;
  SplitRatios split;
  int workers = 1;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

Scene generate_scene(std::uint64_t seed, const GeneratorConfig& config);

/// Every action applicable in `scene`, in a fixed enumeration order.
std::vector<ActionSpec> applicable_actions(const Scene& scene, const std::vector<Verb>& verbs);

/// Empty string when applicable, otherwise the violated precondition.
std::string check_applicable(const Scene& scene, const ActionSpec& action);

/// Target state; throws ActionError naming the violated precondition.
Scene apply_action(const Scene& scene, const ActionSpec& action);

/// Static scene graph of a state (locations, object states, what the person holds).
TripletSet scene_graph(const Scene& scene);
/// (person, <verb>ing, object).
TripletLabel event_triplet(const ActionSpec& action);

struct TripletChange {
  TripletSet removed;
  TripletSet added;
};

/// Rule table: the triplets an action removes from and adds to the graph of `scene`.
TripletChange implied_changes(const Scene& scene, const ActionSpec& action);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};
const std::vector<Rgb>& palette();

/// Nearest-neighbour scaled 8x8 glyphs per cell; background tinted per region.
Image render(const Scene& scene, int resolution);

struct CaptionTemplate {
  std::string text;  // placeholders {obj}, {src}, {dst}
  double weight = 1.0;
};

const std::vector<CaptionTemplate>& caption_templates(Verb v);
/// Verb-class lookup for caption tokens; nullopt for tokens naming no verb class.
std::optional<Verb> verb_class_of_token(std::string_view token);
/// POS lexicon covering every token the generator can emit.
std::vector<std::pair<std::string, PosTag>> world_lexicon();

std::string caption_action(const ActionSpec& action, std::uint64_t seed);

struct GeneratedSample {
  Scene before;
  ActionSpec action;
  Scene after;
  StatePairSample record;
};

/// One record, fully determined by (config, index).
GeneratedSample generate_sample(const GeneratorConfig& config, std::size_t index);

struct DatasetManifest {
  std::vector<std::pair<std::string, std::string>> files;  // relative path, sha256
  std::string checksum;                                   // over the file list
  SplitCounts counts;
  std::string text() const;
};

/// Writes train/dev/test.jsonl, images/, lexicon.tsv, generator.json and manifest.txt.
DatasetManifest generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir);

GeneratorConfig generator_config_from_json(const std::string& text);
std::string generator_config_to_json(const GeneratorConfig& config);

}  // namespace opcap::world
