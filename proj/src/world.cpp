#include "opcap/world.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <map>
#include <random>
#include <thread>

namespace opcap::world {

namespace {

constexpr std::string_view kRegions[] = {"shelf", "table", "counter", "floor"};

constexpr Rgb kRegionTint[] = {{200, 190, 170}, {170, 140, 110}, {190, 200, 210}, {150, 160, 150}};
constexpr Rgb kAgentRing{30, 30, 30};
constexpr Rgb kLidMarker{255, 255, 255};
constexpr Rgb kDirtMarker{110, 70, 30};
constexpr Rgb kHookMarker{90, 90, 90};

const std::vector<ObjectClass> kClasses = {
    {"fork", true, false, true, false},   {"cup", true, false, true, false},
    {"plate", true, false, true, false},  {"bowl", true, false, true, false},
    {"pan", true, false, true, false},    {"bottle", true, false, true, false},
    {"sponge", true, false, false, false}, {"towel", true, false, false, true},
    {"shirt", true, false, false, true},  {"jacket", true, false, false, true},
    {"lid", false, true, false, false},   {"drawer", false, true, false, false},
    {"door", false, true, false, false},  {"fridge", false, true, false, false},
    {"box", false, true, false, false},
};

// 6x6 class glyphs, bit (y*6 + x). Generated once from a fixed stream so that
// every pair of glyphs differs in at least 8 pixels.
const std::vector<std::uint64_t>& class_patterns() {
  static const std::vector<std::uint64_t> patterns = [] {
    std::vector<std::uint64_t> out;
    std::uint64_t state = 0x6f70636170ULL;
    while (out.size() < kClasses.size()) {
      state = splitmix64(state);
      const std::uint64_t m = state & ((1ULL << 36) - 1);
      const int pop = std::popcount(m);
      if (pop < 14 || pop > 22) continue;
      bool distinct = true;
      for (auto p : out) distinct = distinct && std::popcount(p ^ m) >= 8;
      if (distinct) out.push_back(m);
    }
    return out;
  }();
  return patterns;
}

int class_index(std::string_view name) {
  for (std::size_t i = 0; i < kClasses.size(); ++i) {
    if (kClasses[i].name == name) return static_cast<int>(i);
  }
  throw ConfigError("unknown object class '" + std::string(name) + "'");
}

std::vector<Verb> resolve_verbs(const GeneratorConfig& config) {
  if (config.verbs.empty()) return {kAllVerbs.begin(), kAllVerbs.end()};
  std::vector<Verb> out;
  for (const auto& v : config.verbs) out.push_back(parse_verb(v));
  return out;
}

std::vector<std::string> resolve_classes(const GeneratorConfig& config) {
  if (config.object_classes.empty()) {
    std::vector<std::string> out;
    for (const auto& c : kClasses) out.push_back(c.name);
    return out;
  }
  for (const auto& c : config.object_classes) class_index(c);
  return config.object_classes;
}

void add_state_triplets(const SceneObject& o, TripletSet& out) {
  const auto& cls = object_class(o.cls);
  if (cls.openable) out.insert({o.cls, "is", o.open ? "open" : "closed"});
  if (cls.washable) out.insert({o.cls, "is", o.dirty ? "dirty" : "clean"});
  if (cls.hangable && o.hung) out.insert({o.cls, "is", "hung"});
}

std::vector<Cell> empty_cells(const Scene& scene) {
  std::vector<Cell> out;
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      const Cell c{x, y};
      if (!(c == scene.agent.cell) && !scene.occupied(c)) out.push_back(c);
    }
  }
  return out;
}

std::size_t index_at(const Scene& scene, Cell c) {
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].cell == c) return i;
  }
  return scene.objects.size();
}

bool in_grid(const Scene& scene, Cell c) { return c.x >= 0 && c.y >= 0 && c.x < scene.width && c.y < scene.height; }

}  // namespace

std::string_view to_string(Verb v) {
  switch (v) {
    case Verb::take: return "take";
    case Verb::put: return "put";
    case Verb::open: return "open";
    case Verb::close: return "close";
    case Verb::move: return "move";
    case Verb::wash: return "wash";
    case Verb::hang: return "hang";
    case Verb::remove: return "remove";
  }
  return "take";
}

Verb parse_verb(std::string_view s) {
  for (auto v : kAllVerbs) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown verb '" + std::string(s) + "'");
}

std::string_view event_relationship(Verb v) {
  switch (v) {
    case Verb::take: return "taking";
    case Verb::put: return "putting";
    case Verb::open: return "opening";
    case Verb::close: return "closing";
    case Verb::move: return "moving";
    case Verb::wash: return "washing";
    case Verb::hang: return "hanging";
    case Verb::remove: return "removing";
  }
  return "taking";
}

const std::vector<ObjectClass>& object_classes() { return kClasses; }

const ObjectClass& object_class(std::string_view name) {
  return kClasses[static_cast<std::size_t>(class_index(name))];
}

const std::vector<Rgb>& palette() {
  static const std::vector<Rgb> colors = {{220, 40, 40},  {40, 180, 60},  {50, 80, 220},
                                          {230, 210, 40}, {150, 60, 180}, {240, 140, 30}};
  return colors;
}

const SceneObject* Scene::object_at(Cell c) const {
  for (const auto& o : objects) {
    if (o.cell == c) return &o;
  }
  return nullptr;
}

bool Scene::occupied(Cell c) const { return object_at(c) != nullptr; }

std::string_view region_name(const Scene& scene, Cell c) {
  const int band = std::clamp(c.y * 4 / std::max(scene.height, 1), 0, 3);
  return kRegions[band];
}

void GeneratorConfig::validate() const {
  if (grid_width < 1 || grid_height < 1) throw ConfigError("grid size must be positive");
  if (resolution < grid_width || resolution % grid_width != 0) {
    throw ConfigError("resolution must be a positive multiple of the grid width");
  }
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("object count range is invalid");
  const int capacity = grid_width * grid_height - 1;  // one cell is the agent's
  if (max_objects > capacity) {
    throw ConfigError("object count " + std::to_string(max_objects) + " exceeds grid capacity " +
                      std::to_string(capacity));
  }
  const auto classes = resolve_classes(*this);
  if (max_objects > static_cast<int>(classes.size())) {
    throw ConfigError("object count exceeds the number of distinct object classes");
  }
  if (hold_probability < 0 || hold_probability > 1) throw ConfigError("hold_probability must be in [0,1]");
  resolve_verbs(*this);
  if (count < 0) throw ConfigError("count must be non-negative");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  split_counts(0, split);
}

Scene generate_scene(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.width = config.grid_width;
  scene.height = config.grid_height;

  auto classes = resolve_classes(config);
  std::shuffle(classes.begin(), classes.end(), rng);
  const int n = std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);

  std::vector<Cell> cells;
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) cells.push_back({x, y});
  }
  std::shuffle(cells.begin(), cells.end(), rng);
  scene.agent.cell = cells[0];

  std::uniform_int_distribution<int> color(0, static_cast<int>(palette().size()) - 1);
  std::bernoulli_distribution coin(0.5);
  auto make_object = [&](const std::string& cls, Cell cell) {
    SceneObject o;
    o.cls = cls;
    o.cell = cell;
    o.color = color(rng);
    const auto& info = object_class(cls);
    if (info.openable) o.open = coin(rng);
    if (info.washable) o.dirty = coin(rng);
    return o;
  };
  for (int i = 0; i < n; ++i) scene.objects.push_back(make_object(classes[i], cells[i + 1]));

  if (std::bernoulli_distribution(config.hold_probability)(rng)) {
    std::vector<std::string> spare;
    for (std::size_t i = static_cast<std::size_t>(n); i < classes.size(); ++i) {
      if (object_class(classes[i]).portable) spare.push_back(classes[i]);
    }
    if (!spare.empty()) {
      const auto pick = std::uniform_int_distribution<std::size_t>(0, spare.size() - 1)(rng);
      scene.agent.held = make_object(spare[pick], scene.agent.cell);
    }
  }
  return scene;
}

std::vector<ActionSpec> applicable_actions(const Scene& scene, const std::vector<Verb>& verbs) {
  std::vector<ActionSpec> out;
  const auto free_cells = empty_cells(scene);
  auto at = [&](Verb v, const SceneObject& o) {
    ActionSpec a;
    a.verb = v;
    a.object = o.cls;
    a.source = o.cell;
    a.source_region = std::string(region_name(scene, o.cell));
    return a;
  };
  for (Verb v : verbs) {
    switch (v) {
      case Verb::take:
        if (scene.agent.held) break;
        [[fallthrough]];
      case Verb::remove:
        for (const auto& o : scene.objects) {
          if (object_class(o.cls).portable) out.push_back(at(v, o));
        }
        break;
      case Verb::move:
        for (const auto& o : scene.objects) {
          if (!object_class(o.cls).portable) continue;
          for (Cell c : free_cells) {
            auto a = at(v, o);
            a.destination = c;
            a.destination_region = std::string(region_name(scene, c));
            out.push_back(std::move(a));
          }
        }
        break;
      case Verb::open:
      case Verb::close:
        for (const auto& o : scene.objects) {
          if (object_class(o.cls).openable && o.open == (v == Verb::close)) out.push_back(at(v, o));
        }
        break;
      case Verb::wash:
        for (const auto& o : scene.objects) {
          if (object_class(o.cls).washable && o.dirty) out.push_back(at(v, o));
        }
        break;
      case Verb::put:
      case Verb::hang:
        if (!scene.agent.held) break;
        if (v == Verb::hang && !object_class(scene.agent.held->cls).hangable) break;
        for (Cell c : free_cells) {
          ActionSpec a;
          a.verb = v;
          a.object = scene.agent.held->cls;
          a.destination = c;
          a.destination_region = std::string(region_name(scene, c));
          out.push_back(std::move(a));
        }
        break;
    }
  }
  return out;
}

std::string check_applicable(const Scene& scene, const ActionSpec& action) {
  const std::string verb(to_string(action.verb));
  const bool from_hand = action.verb == Verb::put || action.verb == Verb::hang;
  const SceneObject* target = nullptr;
  if (from_hand) {
    if (!scene.agent.held) return verb + " requires the person to hold an object";
    if (scene.agent.held->cls != action.object) return verb + " requires the person to hold the " + action.object;
  } else {
    if (!action.source || !in_grid(scene, *action.source)) return verb + " requires a source cell inside the grid";
    target = scene.object_at(*action.source);
    if (!target || target->cls != action.object) return verb + " requires the " + action.object + " at the source cell";
  }
  const auto& info = object_class(action.object);
  const bool needs_dest = from_hand || action.verb == Verb::move;
  if (needs_dest) {
    if (!action.destination || !in_grid(scene, *action.destination)) {
      return verb + " requires a destination cell inside the grid";
    }
    if (*action.destination == scene.agent.cell || scene.occupied(*action.destination)) {
      return verb + " requires an empty destination cell";
    }
  }
  switch (action.verb) {
    case Verb::take:
      if (scene.agent.held) return "take requires an empty hand";
      [[fallthrough]];
    case Verb::remove:
    case Verb::move:
      if (!info.portable) return verb + " requires a portable object";
      break;
    case Verb::open:
      if (!info.openable) return "open requires an openable object";
      if (target->open) return "open requires the " + action.object + " to be closed";
      break;
    case Verb::close:
      if (!info.openable) return "close requires an openable object";
      if (!target->open) return "close requires the " + action.object + " to be open";
      break;
    case Verb::wash:
      if (!info.washable) return "wash requires a washable object";
      if (!target->dirty) return "wash requires the " + action.object + " to be dirty";
      break;
    case Verb::hang:
      if (!info.hangable) return "hang requires a hangable object";
      break;
    case Verb::put:
      break;
  }
  return {};
}

Scene apply_action(const Scene& scene, const ActionSpec& action) {
  if (auto why = check_applicable(scene, action); !why.empty()) throw ActionError(why);
  Scene next = scene;
  const std::size_t idx = action.source ? index_at(next, *action.source) : next.objects.size();
  switch (action.verb) {
    case Verb::take: {
      SceneObject o = next.objects[idx];
      o.hung = false;
      o.cell = next.agent.cell;
      next.agent.held = o;
      next.objects.erase(next.objects.begin() + static_cast<std::ptrdiff_t>(idx));
      break;
    }
    case Verb::remove:
      next.objects.erase(next.objects.begin() + static_cast<std::ptrdiff_t>(idx));
      break;
    case Verb::move:
      next.objects[idx].cell = *action.destination;
      next.objects[idx].hung = false;
      break;
    case Verb::put:
    case Verb::hang: {
      SceneObject o = *next.agent.held;
      o.cell = *action.destination;
      o.hung = action.verb == Verb::hang;
      next.agent.held.reset();
      next.objects.push_back(o);
      break;
    }
    case Verb::open: next.objects[idx].open = true; break;
    case Verb::close: next.objects[idx].open = false; break;
    case Verb::wash: next.objects[idx].dirty = false; break;
  }
  return next;
}

TripletSet scene_graph(const Scene& scene) {
  TripletSet g;
  g.insert({"person", "in_front_of", std::string(region_name(scene, scene.agent.cell))});
  if (scene.agent.held) {
    g.insert({"person", "holding", scene.agent.held->cls});
    add_state_triplets(*scene.agent.held, g);
  }
  for (const auto& o : scene.objects) {
    g.insert({o.cls, "on", std::string(region_name(scene, o.cell))});
    add_state_triplets(o, g);
  }
  return g;
}

TripletLabel event_triplet(const ActionSpec& action) {
  return {"person", std::string(event_relationship(action.verb)), action.object};
}

TripletChange implied_changes(const Scene& scene, const ActionSpec& action) {
  if (auto why = check_applicable(scene, action); !why.empty()) throw ActionError(why);
  const std::string& o = action.object;
  auto place = [&](Cell c) { return TripletLabel{o, "on", std::string(region_name(scene, c))}; };
  TripletChange ch;
  ch.added.insert(event_triplet(action));
  const SceneObject* target = action.source ? scene.object_at(*action.source) : nullptr;
  switch (action.verb) {
    case Verb::take:
      ch.removed.insert(place(*action.source));
      if (target->hung) ch.removed.insert({o, "is", "hung"});
      ch.added.insert({"person", "holding", o});
      break;
    case Verb::remove:
      ch.removed.insert(place(*action.source));
      add_state_triplets(*target, ch.removed);
      break;
    case Verb::move:
      ch.removed.insert(place(*action.source));
      if (target->hung) ch.removed.insert({o, "is", "hung"});
      ch.added.insert(place(*action.destination));
      break;
    case Verb::put:
      ch.removed.insert({"person", "holding", o});
      ch.added.insert(place(*action.destination));
      break;
    case Verb::hang:
      ch.removed.insert({"person", "holding", o});
      ch.added.insert(place(*action.destination));
      ch.added.insert({o, "is", "hung"});
      break;
    case Verb::open:
      ch.removed.insert({o, "is", "closed"});
      ch.added.insert({o, "is", "open"});
      break;
    case Verb::close:
      ch.removed.insert({o, "is", "open"});
      ch.added.insert({o, "is", "closed"});
      break;
    case Verb::wash:
      ch.removed.insert({o, "is", "dirty"});
      ch.added.insert({o, "is", "clean"});
      break;
  }
  // A move within one region leaves the location triplet unchanged.
  TripletChange net;
  std::set_difference(ch.removed.begin(), ch.removed.end(), ch.added.begin(), ch.added.end(),
                      std::inserter(net.removed, net.removed.end()));
  std::set_difference(ch.added.begin(), ch.added.end(), ch.removed.begin(), ch.removed.end(),
                      std::inserter(net.added, net.added.end()));
  return net;
}

Image render(const Scene& scene, int resolution) {
  if (resolution < scene.width || resolution % scene.width != 0) {
    throw ConfigError("resolution must be a positive multiple of the grid width");
  }
  const int cs = resolution / scene.width;
  Image img(resolution, cs * scene.height);
  const auto& patterns = class_patterns();
  const auto& colors = palette();

  auto glyph = [&](Cell cell, int gx, int gy) -> Rgb {
    const int band = std::clamp(cell.y * 4 / scene.height, 0, 3);
    const Rgb base = kRegionTint[band];
    const bool inner = gx >= 1 && gx <= 6 && gy >= 1 && gy <= 6;
    if (cell == scene.agent.cell) {
      if (inner && (gx == 1 || gx == 6 || gy == 1 || gy == 6)) return kAgentRing;
      const auto& held = scene.agent.held;
      if (held) {
        if (inner) return colors[static_cast<std::size_t>(held->color)];
        if (gy == 7 && gx >= 1 && gx <= 6 && held->dirty) return kDirtMarker;
      }
      return base;
    }
    const SceneObject* o = scene.object_at(cell);
    if (!o) return base;
    const auto& info = object_class(o->cls);
    if (inner) {
      const auto bit = static_cast<unsigned>((gy - 1) * 6 + (gx - 1));
      const auto pattern = patterns[static_cast<std::size_t>(class_index(o->cls))];
      return (pattern >> bit) & 1ULL ? colors[static_cast<std::size_t>(o->color)] : base;
    }
    const bool edge_run = gx >= 1 && gx <= 6;
    const bool side_run = gy >= 1 && gy <= 6;
    if (info.openable && !o->open && gy == 0 && edge_run) return kLidMarker;
    if (info.openable && o->open && gx == 7 && side_run) return kLidMarker;
    if (info.washable && o->dirty && gy == 7 && edge_run) return kDirtMarker;
    if (info.hangable && o->hung && gx == 0 && side_run) return kHookMarker;
    return base;
  };

  for (int py = 0; py < img.height; ++py) {
    for (int px = 0; px < img.width; ++px) {
      const Cell cell{px / cs, py / cs};
      const int gx = (px % cs) * 8 / cs;
      const int gy = (py % cs) * 8 / cs;
      const Rgb c = glyph(cell, gx, gy);
      auto* p = img.pixel(px, py);
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Captions

const std::vector<CaptionTemplate>& caption_templates(Verb v) {
  static const std::map<Verb, std::vector<CaptionTemplate>> table = {
      {Verb::take,
       {{"take the {obj} from the {src}", 0.6}, {"pick up the {obj} from the {src}", 0.25},
        {"go and grab the {obj} on the {src}", 0.15}}},
      {Verb::put,
       {{"put the {obj} on the {dst}", 0.6}, {"place the {obj} on the {dst}", 0.25},
        {"set the {obj} down on the {dst}", 0.15}}},
      {Verb::open, {{"open the {obj}", 0.6}, {"pull the {obj} open", 0.25}, {"go and open the {obj}", 0.15}}},
      {Verb::close, {{"close the {obj}", 0.6}, {"shut the {obj}", 0.25}, {"push the {obj} closed", 0.15}}},
      {Verb::move,
       {{"move the {obj} to the {dst}", 0.6}, {"shift the {obj} onto the {dst}", 0.25},
        {"slide the {obj} over to the {dst}", 0.15}}},
      {Verb::wash, {{"wash the {obj}", 0.6}, {"rinse the {obj}", 0.25}, {"scrub the {obj} clean", 0.15}}},
      {Verb::hang,
       {{"hang the {obj} on the {dst}", 0.6}, {"hang up the {obj}", 0.25},
        {"drape the {obj} over the {dst}", 0.15}}},
      {Verb::remove,
       {{"remove the {obj} from the {src}", 0.6}, {"throw away the {obj} on the {src}", 0.25},
        {"clear the {obj} off the {src}", 0.15}}},
  };
  return table.at(v);
}

std::optional<Verb> verb_class_of_token(std::string_view token) {
  static const std::map<std::string, Verb, std::less<>> table = {
      {"take", Verb::take},     {"pick", Verb::take},    {"grab", Verb::take},   {"put", Verb::put},
      {"place", Verb::put},     {"set", Verb::put},      {"open", Verb::open},   {"pull", Verb::open},
      {"close", Verb::close},   {"shut", Verb::close},   {"push", Verb::close},  {"move", Verb::move},
      {"shift", Verb::move},    {"slide", Verb::move},   {"wash", Verb::wash},   {"rinse", Verb::wash},
      {"scrub", Verb::wash},    {"hang", Verb::hang},    {"drape", Verb::hang},  {"remove", Verb::remove},
      {"throw", Verb::remove},  {"clear", Verb::remove},
  };
  auto it = table.find(token);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::vector<std::pair<std::string, PosTag>> world_lexicon() {
  std::map<std::string, PosTag> lex;
  for (auto v : kAllVerbs) {
    for (const auto& t : caption_templates(v)) {
      for (auto& tok : normalize_caption(t.text)) {
        if (tok == "obj" || tok == "src" || tok == "dst") continue;
        lex.emplace(tok, verb_class_of_token(tok) ? PosTag::verb : PosTag::other);
      }
    }
    lex.emplace(std::string(event_relationship(v)), PosTag::other);
  }
  lex["go"] = PosTag::aux_verb;
  for (const auto& c : kClasses) lex[c.name] = PosTag::noun;
  for (auto r : kRegions) lex[std::string(r)] = PosTag::noun;
  lex["person"] = PosTag::noun;
  for (const char* t : {"in_front_of", "holding", "on", "is", "closed", "dirty", "clean", "hung"}) {
    lex.emplace(t, PosTag::other);
  }
  return {lex.begin(), lex.end()};
}

std::string caption_action(const ActionSpec& action, std::uint64_t seed) {
  const auto& templates = caption_templates(action.verb);
  std::vector<double> weights;
  for (const auto& t : templates) weights.push_back(t.weight);
  std::mt19937_64 rng(seed);
  const auto pick = std::discrete_distribution<std::size_t>(weights.begin(), weights.end())(rng);
  std::string text = templates[pick].text;
  auto substitute = [&](const std::string& key, const std::string& value) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
      text.replace(pos, key.size(), value);
    }
  };
  substitute("{obj}", action.object);
  substitute("{src}", action.source_region.empty() ? action.destination_region : action.source_region);
  substitute("{dst}", action.destination_region.empty() ? action.source_region : action.destination_region);
  return text;
}

// ---------------------------------------------------------------------------
// Dataset generation

GeneratedSample generate_sample(const GeneratorConfig& config, std::size_t index) {
  const std::uint64_t seed = derive_seed(config.seed, index);
  std::mt19937_64 rng(seed);
  const auto verbs = resolve_verbs(config);
  const Verb verb = verbs[std::uniform_int_distribution<std::size_t>(0, verbs.size() - 1)(rng)];

  GeneratedSample out;
  for (std::uint64_t attempt = 1;; ++attempt) {
    if (attempt > 10000) {
      throw ConfigError("no scene admits a '" + std::string(to_string(verb)) + "' action under this config");
    }
    Scene scene = generate_scene(derive_seed(seed, attempt), config);
    auto actions = applicable_actions(scene, {verb});
    if (actions.empty()) continue;
    out.action = actions[std::uniform_int_distribution<std::size_t>(0, actions.size() - 1)(rng)];
    out.before = std::move(scene);
    break;
  }
  out.after = apply_action(out.before, out.action);

  char id[32];
  std::snprintf(id, sizeof(id), "s%06zu", index);
  auto& r = out.record;
  r.id = id;
  r.image_a = std::string("images/") + id + "_a.png";
  r.image_b = std::string("images/") + id + "_b.png";
  r.viewpoint = std::bernoulli_distribution(0.5)(rng) ? Viewpoint::first_person : Viewpoint::third_person;
  r.object_hint = out.action.object;
  r.caption = caption_action(out.action, derive_seed(seed, 0));
  r.graphs_a = scene_graph(out.before);
  r.graphs_b = scene_graph(out.after);
  r.graphs_b.insert(event_triplet(out.action));
  return out;
}

std::string DatasetManifest::text() const {
  std::string out;
  for (const auto& [path, hash] : files) out += hash + "  " + path + "\n";
  out += "checksum " + checksum + "\n";
  return out;
}

DatasetManifest generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw Error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const auto n = static_cast<std::size_t>(config.count);
  std::vector<StatePairSample> records(n);
  std::vector<std::string> image_hashes(2 * n);
  std::vector<std::string> errors(static_cast<std::size_t>(config.workers));
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t i = worker; i < n; i += static_cast<std::size_t>(config.workers)) {
        auto g = generate_sample(config, i);
        const Scene* scenes[2] = {&g.before, &g.after};
        const std::string* refs[2] = {&g.record.image_a, &g.record.image_b};
        for (int k = 0; k < 2; ++k) {
          const auto bytes = encode_png(render(*scenes[k], config.resolution));
          const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
          write_text_file(out_dir / *refs[k], view);
          image_hashes[2 * i + static_cast<std::size_t>(k)] = sha256_hex(view);
        }
        records[i] = std::move(g.record);
      }
    } catch (const std::exception& e) {
      errors[worker] = e.what();
    }
  };
  if (config.workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < config.workers; ++w) pool.emplace_back(work, static_cast<std::size_t>(w));
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(e);
  }

  DatasetManifest manifest;
  manifest.counts = split_counts(n, config.split);
  const std::pair<const char*, std::size_t> parts[] = {
      {"train.jsonl", manifest.counts.train}, {"dev.jsonl", manifest.counts.dev}, {"test.jsonl", manifest.counts.test}};
  std::size_t begin = 0;
  for (const auto& [name, size] : parts) {
    const std::vector<StatePairSample> part(records.begin() + static_cast<std::ptrdiff_t>(begin),
                                            records.begin() + static_cast<std::ptrdiff_t>(begin + size));
    const auto text = serialize_records(part);
    write_text_file(out_dir / name, text);
    manifest.files.emplace_back(name, sha256_hex(text));
    begin += size;
  }
  save_lexicon(out_dir / "lexicon.tsv", world_lexicon());
  manifest.files.emplace_back("lexicon.tsv", sha256_file(out_dir / "lexicon.tsv"));
  const auto config_text = generator_config_to_json(config);
  write_text_file(out_dir / "generator.json", config_text);
  manifest.files.emplace_back("generator.json", sha256_hex(config_text));
  for (std::size_t i = 0; i < n; ++i) {
    manifest.files.emplace_back(records[i].image_a, image_hashes[2 * i]);
    manifest.files.emplace_back(records[i].image_b, image_hashes[2 * i + 1]);
  }
  std::string listing;
  for (const auto& [path, hash] : manifest.files) listing += hash + "  " + path + "\n";
  manifest.checksum = sha256_hex(listing);
  write_text_file(out_dir / "manifest.txt", manifest.text());
  return manifest;
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  using json = nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("generator config must be an object");
  GeneratorConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "grid_width") c.grid_width = v.get<int>();
      else if (key == "grid_height") c.grid_height = v.get<int>();
      else if (key == "resolution") c.resolution = v.get<int>();
      else if (key == "min_objects") c.min_objects = v.get<int>();
      else if (key == "max_objects") c.max_objects = v.get<int>();
      else if (key == "hold_probability") c.hold_probability = v.get<double>();
      else if (key == "object_classes") c.object_classes = v.get<std::vector<std::string>>();
      else if (key == "verbs") c.verbs = v.get<std::vector<std::string>>();
      else if (key == "count") c.count = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "split_train") c.split.train = v.get<double>();
      else if (key == "split_dev") c.split.dev = v.get<double>();
      else if (key == "split_test") c.split.test = v.get<double>();
      else if (key == "workers") c.workers = v.get<int>();
      else throw ConfigError("unknown generator config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string generator_config_to_json(const GeneratorConfig& c) {
  nlohmann::ordered_json j;
  j["grid_width"] = c.grid_width;
  j["grid_height"] = c.grid_height;
  j["resolution"] = c.resolution;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["hold_probability"] = c.hold_probability;
  j["object_classes"] = c.object_classes;
  j["verbs"] = c.verbs;
  j["count"] = c.count;
  j["seed"] = c.seed;
  j["split_train"] = c.split.train;
  j["split_dev"] = c.split.dev;
  j["split_test"] = c.split.test;
  // workers is omitted so the output bytes do not depend on it.
  return j.dump(2) + "\n";
}

}  // namespace opcap::world
