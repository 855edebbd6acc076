#include "opcap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "opcap/config.hpp"
#include "opcap/util.hpp"

namespace opcap {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'O', 'P', 'C', 'A', 'P', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError(path.string() + ": truncated checkpoint");
  return v;
}

void put_array(std::ostream& os, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

std::vector<int> mask_ids(const std::vector<bool>& mask) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) ids.push_back(static_cast<int>(i));
  }
  return ids;
}

std::vector<bool> ids_mask(const std::vector<int>& ids, int size) {
  std::vector<bool> m(static_cast<std::size_t>(size), false);
  for (int id : ids) {
    if (id < 0 || id >= size) throw LoadError("role mask id out of range");
    m[static_cast<std::size_t>(id)] = true;
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  nlohmann::ordered_json h;
  h["format_version"] = kVersion;
  h["config"] = config_to_json(state.config);
  h["epoch"] = state.epoch;
  h["step"] = state.step;
  h["seed"] = state.seed;
  h["vocab_hash"] = state.vocab.hash();
  h["vocabulary"] = state.vocab.tokens();
  if (state.vocab.has_pos_tags()) {
    std::vector<std::string> tags;
    for (int i = 0; i < state.vocab.size(); ++i) tags.emplace_back(to_string(state.vocab.pos(i)));
    h["pos_tags"] = tags;
  }
  const RoleMasks& rm = state.model.role_masks;
  if (!rm.empty()) {
    h["role_masks"] = {{"subject", mask_ids(rm.subject)},
                       {"relationship", mask_ids(rm.relationship)},
                       {"object", mask_ids(rm.object)}};
  }
  h["optimizer_steps"] = state.optimizer.steps();
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));

    auto& model = const_cast<CaptionModel&>(state.model);
    const auto params = model.parameters();
    const auto& opt = state.optimizer.state();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size() + opt.size()));
    for (const auto& p : params) put_array(os, p.name, *p.value);
    for (const auto& [name, m] : opt) put_array(os, "optimizer." + name, m);
    if (!os) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw LoadError(path.string() + ": not a checkpoint file");
  }
  const auto version = take<std::uint32_t>(is, path);
  if (version != kVersion) throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(is, path);
  if (header_len > (1u << 30)) throw LoadError(path.string() + ": implausible header length");
  std::string header(header_len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) throw LoadError(path.string() + ": truncated");

  TrainState st;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
    st.config = config_from_json(h.at("config"));
    st.epoch = h.at("epoch").get<int>();
    st.step = h.at("step").get<std::int64_t>();
    st.seed = h.at("seed").get<std::uint64_t>();
    for (const auto& t : h.at("vocabulary")) st.vocab.add(t.get<std::string>());
    if (h.contains("pos_tags")) {
      const auto tags = h.at("pos_tags").get<std::vector<std::string>>();
      for (std::size_t i = 0; i < tags.size(); ++i) {
        st.vocab.set_pos(st.vocab.token(static_cast<int>(i)), parse_pos_tag(tags[i]));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (st.vocab.hash() != h.at("vocab_hash").get<std::string>()) {
    throw LoadError(path.string() + ": vocabulary hash does not match its token list");
  }

  st.config.model.vocab_size = st.vocab.size();
  st.model = CaptionModel(st.config.model);
  if (h.contains("role_masks")) {
    const auto& m = h.at("role_masks");
    st.model.role_masks = {ids_mask(m.at("subject").get<std::vector<int>>(), st.vocab.size()),
                           ids_mask(m.at("relationship").get<std::vector<int>>(), st.vocab.size()),
                           ids_mask(m.at("object").get<std::vector<int>>(), st.vocab.size())};
  }
  st.optimizer = Optimizer(st.config.optimizer);
  st.optimizer.set_steps(h.at("optimizer_steps").get<std::int64_t>());

  auto params = st.model.parameters();
  std::map<std::string, Matrix*> by_name;
  for (auto& p : params) by_name[p.name] = p.value;
  std::size_t loaded = 0;
  const auto count = take<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = take<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw LoadError(path.string() + ": truncated");
    const auto rows = take<std::uint32_t>(is, path);
    const auto cols = take<std::uint32_t>(is, path);
    Matrix m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw LoadError(path.string() + ": truncated array " + name);
    }
    if (name.rfind("optimizer.", 0) == 0) {
      st.optimizer.state()[name.substr(10)] = std::move(m);
      continue;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError(path.string() + ": unexpected array " + name);
    if (it->second->rows() != m.rows() || it->second->cols() != m.cols()) {
      throw LoadError(path.string() + ": array " + name + " has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", model expects " + std::to_string(it->second->rows()) + "x" +
                      std::to_string(it->second->cols()));
    }
    *it->second = std::move(m);
    ++loaded;
  }
  if (loaded != by_name.size()) throw LoadError(path.string() + ": checkpoint is missing model arrays");
  return st;
}

}  // namespace opcap
