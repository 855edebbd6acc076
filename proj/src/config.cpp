#include "opcap/config.hpp"

#include "opcap/util.hpp"

namespace opcap {

namespace {

using nlohmann::json;

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

// Overlays `src` onto `dst`, refusing keys that `dst` does not define.
void merge_strict(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value())) {
        throw ConfigError("config key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                          std::string(it.value().type_name()));
      }
      slot = it.value();
    }
  }
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  auto& m = j["model"];
  m["image_size"] = c.model.image_size;
  m["conv"] = nlohmann::ordered_json::array();
  for (const auto& l : c.model.conv) {
    m["conv"].push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  }
  m["spatial_hidden"] = c.model.spatial_hidden;
  m["embed_dim"] = c.model.embed_dim;
  m["hidden_dim"] = c.model.hidden_dim;
  m["attention_dim"] = c.model.attention_dim;
  m["per_step_attention"] = c.model.per_step_attention;
  m["train_encoder"] = c.model.train_encoder;
  m["max_caption_len"] = c.model.max_caption_len;
  m["max_triplets"] = c.model.max_triplets;

  auto& l = j["loss"];
  l["lambda_l1"] = c.loss.lambda_l1;
  l["lambda_ent"] = c.loss.lambda_ent;
  l["alpha_mode"] = std::string(to_string(c.loss.alpha_mode.kind));
  l["alpha"] = c.loss.alpha_mode.alpha;
  l["alpha_low"] = c.loss.alpha_mode.low;
  l["alpha_high"] = c.loss.alpha_mode.high;
  l["alpha_period"] = c.loss.alpha_mode.period_epochs;
  l["sg_mode"] = std::string(to_string(c.loss.sg_mode));

  auto& o = j["optimizer"];
  o["kind"] = std::string(to_string(c.optimizer.kind));
  o["momentum"] = c.optimizer.momentum;
  o["beta1"] = c.optimizer.beta1;
  o["beta2"] = c.optimizer.beta2;
  o["epsilon"] = c.optimizer.epsilon;
  o["grad_clip_norm"] = c.optimizer.grad_clip_norm;

  auto& r = j["lr"];
  r["base"] = c.lr.base;
  r["factor"] = c.lr.factor;
  r["step_epochs"] = c.lr.step_epochs;

  auto& t = j["train"];
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["seed"] = c.train.seed;
  t["min_count"] = c.train.min_count;
  t["max_dev_samples"] = c.train.max_dev_samples;
  t["keep_checkpoints"] = c.train.keep_checkpoints;
  t["features"] = c.train.features;

  j["metrics"]["rouge_beta"] = c.rouge_beta;
  return j;
}

const json& default_config_json() {
  static const json doc = [] {
    try {
      return json::parse(default_config_text());
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("embedded default config: ") + e.what());
    }
  }();
  return doc;
}

ExperimentConfig default_config() { return config_from_json(json::object()); }

ExperimentConfig config_from_json(const json& user) {
  json j = default_config_json();
  merge_strict(j, user, "");

  ExperimentConfig c;
  c.model.image_size = get<int>(j, "model", "image_size");
  c.model.conv.clear();
  for (const auto& l : j.at("model").at("conv")) {
    for (auto it = l.begin(); it != l.end(); ++it) {
      if (it.key() != "out_channels" && it.key() != "kernel" && it.key() != "stride") {
        throw ConfigError("unknown config key 'model.conv[]." + it.key() + "'");
      }
    }
    try {
      c.model.conv.push_back({l.at("out_channels").get<int>(), l.at("kernel").get<int>(), l.at("stride").get<int>()});
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key 'model.conv': ") + e.what());
    }
  }
  c.model.spatial_hidden = get<int>(j, "model", "spatial_hidden");
  c.model.embed_dim = get<int>(j, "model", "embed_dim");
  c.model.hidden_dim = get<int>(j, "model", "hidden_dim");
  c.model.attention_dim = get<int>(j, "model", "attention_dim");
  c.model.per_step_attention = get<bool>(j, "model", "per_step_attention");
  c.model.train_encoder = get<bool>(j, "model", "train_encoder");
  c.model.max_caption_len = get<int>(j, "model", "max_caption_len");
  c.model.max_triplets = get<int>(j, "model", "max_triplets");

  c.loss.lambda_l1 = get<double>(j, "loss", "lambda_l1");
  c.loss.lambda_ent = get<double>(j, "loss", "lambda_ent");
  c.loss.alpha_mode.kind = parse_alpha_kind(get<std::string>(j, "loss", "alpha_mode"));
  c.loss.alpha_mode.alpha = get<double>(j, "loss", "alpha");
  c.loss.alpha_mode.low = get<double>(j, "loss", "alpha_low");
  c.loss.alpha_mode.high = get<double>(j, "loss", "alpha_high");
  c.loss.alpha_mode.period_epochs = get<int>(j, "loss", "alpha_period");
  try {
    c.loss.sg_mode = parse_target_mode(get<std::string>(j, "loss", "sg_mode"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  c.optimizer.kind = parse_optimizer_kind(get<std::string>(j, "optimizer", "kind"));
  c.optimizer.momentum = get<double>(j, "optimizer", "momentum");
  c.optimizer.beta1 = get<double>(j, "optimizer", "beta1");
  c.optimizer.beta2 = get<double>(j, "optimizer", "beta2");
  c.optimizer.epsilon = get<double>(j, "optimizer", "epsilon");
  c.optimizer.grad_clip_norm = get<double>(j, "optimizer", "grad_clip_norm");

  c.lr.base = get<double>(j, "lr", "base");
  c.lr.factor = get<double>(j, "lr", "factor");
  c.lr.step_epochs = get<int>(j, "lr", "step_epochs");

  c.train.epochs = get<int>(j, "train", "epochs");
  c.train.batch_size = get<int>(j, "train", "batch_size");
  c.train.seed = get<std::uint64_t>(j, "train", "seed");
  c.train.min_count = get<int>(j, "train", "min_count");
  c.train.max_dev_samples = get<int>(j, "train", "max_dev_samples");
  c.train.keep_checkpoints = get<int>(j, "train", "keep_checkpoints");
  c.train.features = get<std::string>(j, "train", "features");

  c.rouge_beta = get<double>(j, "metrics", "rouge_beta");

  c.loss.validate();
  if (c.train.epochs < 0 || c.train.batch_size < 1) throw ConfigError("train.epochs/batch_size out of range");
  if (c.lr.base <= 0.0 || c.lr.factor <= 0.0 || c.lr.step_epochs < 1) throw ConfigError("lr schedule out of range");
  if (c.rouge_beta <= 0.0) throw ConfigError("metrics.rouge_beta must be positive");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, std::string_view assignment) {
  apply_override(doc, assignment, default_config_json());
}

void apply_override(json& doc, std::string_view assignment, const json& schema) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));

  const json* node = &schema;
  json* target = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (!target->is_object()) *target = json::object();
    target = &(*target)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' names a section, not a value");
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  if (!same_kind(*node, value)) {
    throw ConfigError("config key '" + key + "' expects " + std::string(node->type_name()) + ", got " +
                      std::string(value.type_name()));
  }
  *target = value;
}

}  // namespace opcap
