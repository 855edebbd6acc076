#include "opcap/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opcap/checkpoint.hpp"
#include "opcap/config.hpp"
#include "opcap/image.hpp"
#include "opcap/util.hpp"

namespace opcap {

std::string_view to_string(AlphaKind k) {
  switch (k) {
    case AlphaKind::baseline: return "baseline";
    case AlphaKind::linear_int: return "linear_int";
    case AlphaKind::alternative: return "alternative";
  }
  return "?";
}

AlphaKind parse_alpha_kind(std::string_view s) {
  if (s == "baseline") return AlphaKind::baseline;
  if (s == "linear_int") return AlphaKind::linear_int;
  if (s == "alternative") return AlphaKind::alternative;
  throw ConfigError("unknown alpha mode '" + std::string(s) + "'");
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

void LossConfig::validate() const {
  if (!(lambda_l1 >= 0.0)) throw ConfigError("lambda_l1 must be non-negative");
  if (!(lambda_ent >= 0.0)) throw ConfigError("lambda_ent must be non-negative");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  switch (alpha_mode.kind) {
    case AlphaKind::baseline: break;
    case AlphaKind::linear_int:
      if (!unit(alpha_mode.alpha)) throw ConfigError("alpha must lie in [0, 1]");
      break;
    case AlphaKind::alternative:
      if (!unit(alpha_mode.low) || !unit(alpha_mode.high) || alpha_mode.low > alpha_mode.high) {
        throw ConfigError("alternative alphas must satisfy 0 <= low <= high <= 1");
      }
      if (alpha_mode.period_epochs < 1) throw ConfigError("alternative period must be at least one epoch");
      break;
  }
}

std::pair<double, double> regularizers(const AttentionMap& a_a, const AttentionMap& a_b,
                                       const std::vector<DynamicAttentionWeights>& dynamic_weights) {
  if (a_a.weights.size() != a_b.weights.size()) throw ShapeError("regularizers: attention maps differ in size");
  double l1 = 0.0;
  const auto n = a_a.weights.size() + a_b.weights.size();
  if (n > 0) l1 = (a_a.weights.cwiseAbs().sum() + a_b.weights.cwiseAbs().sum()) / static_cast<double>(n);
  double ent = 0.0;
  for (const auto& w : dynamic_weights) ent += entropy(Eigen::Map<const Vector>(w.w.data(), 3));
  if (!dynamic_weights.empty()) ent /= static_cast<double>(dynamic_weights.size());
  return {l1, ent};
}

double baseline_loss(double l_cap, double l1, double l_ent, const LossConfig& cfg) {
  cfg.validate();
  return l_cap + cfg.lambda_l1 * l1 - cfg.lambda_ent * l_ent;
}

double combined_loss(const LossTerms& cap, const LossTerms& sgr, double alpha, const LossConfig& cfg) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  const double c = baseline_loss(cap.loss, cap.l1, cap.entropy, cfg);
  if (alpha == 1.0) return c;
  const double s = sgr.loss + cfg.lambda_l1 * sgr.l1 - cfg.lambda_ent * sgr.entropy;
  return alpha * c + (1.0 - alpha) * s;
}

double alpha_schedule(int epoch, const LossConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative");
  const AlphaMode& m = cfg.alpha_mode;
  switch (m.kind) {
    case AlphaKind::baseline: return 1.0;
    case AlphaKind::linear_int: return m.alpha;
    case AlphaKind::alternative: return (epoch / m.period_epochs) % 2 == 0 ? m.low : m.high;
  }
  return 1.0;
}

double lr_schedule(int epoch, const LrSchedule& s) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative");
  return s.base * std::pow(s.factor, epoch / s.step_epochs);
}

// ---------------------------------------------------------------------------

double Optimizer::step(const std::vector<NamedParam>& params, const std::vector<NamedParam>& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  double sq = 0.0;
  for (const auto& g : grads) sq += g.value->squaredNorm();
  const double norm = std::sqrt(sq);
  const double scale = cfg_.grad_clip_norm > 0.0 && norm > cfg_.grad_clip_norm ? cfg_.grad_clip_norm / norm : 1.0;
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].value;
    const Matrix& g = *grads[i].value;
    if (cfg_.kind == OptimizerKind::sgd) {
      Matrix& v = state_[params[i].name + ".velocity"];
      if (v.size() == 0) v = Matrix::Zero(p.rows(), p.cols());
      v = cfg_.momentum * v + scale * g;
      p.noalias() -= lr * v;
    } else {
      Matrix& m = state_[params[i].name + ".m"];
      Matrix& s = state_[params[i].name + ".v"];
      if (m.size() == 0) {
        m = Matrix::Zero(p.rows(), p.cols());
        s = Matrix::Zero(p.rows(), p.cols());
      }
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * scale * g;
      s = cfg_.beta2 * s + (1.0 - cfg_.beta2) * (scale * g).cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      p.array() -= lr * (m.array() / c1) / ((s.array() / c2).sqrt() + cfg_.epsilon);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------

std::string epoch_log_header() {
  return "epoch\talpha\tlr\tloss_cap\tloss_sgr\tl1\tentropy_cap\tentropy_sgr\tloss_total\tdev_bleu4\n";
}

std::string format_epoch_log(const EpochLog& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d\t%.4f\t%.6g\t%.9f\t%.9f\t%.9f\t%.9f\t%.9f\t%.9f\t%.6f\n", r.epoch, r.alpha, r.lr,
                r.loss_cap, r.loss_sgr, r.l1, r.entropy_cap, r.entropy_sgr, r.loss_total, r.dev_bleu4);
  return buf;
}

std::vector<EpochLog> parse_epoch_log(const std::string& text) {
  std::vector<EpochLog> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line.rfind("epoch", 0) == 0) continue;
    EpochLog r;
    std::istringstream ls(line);
    if (!(ls >> r.epoch >> r.alpha >> r.lr >> r.loss_cap >> r.loss_sgr >> r.l1 >> r.entropy_cap >> r.entropy_sgr >>
          r.loss_total >> r.dev_bleu4)) {
      throw LoadError("malformed training log line: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------

PreparedData prepare_data(const DatasetSplit& split, const Vocabulary& vocab, const ModelConfig& model,
                          TargetMode sg_mode, const FeatureStore* features) {
  PreparedData d;
  auto lookup = [&](const StatePairSample& s, const std::string& ref) {
    const auto it = features->find(ref);
    if (it == features->end()) throw LoadError("sample " + s.id + ": no precomputed features for " + ref);
    return it->second;
  };
  for (const auto& s : split.samples) {
    d.ids.push_back(s.id);
    d.captions.push_back(tokenize_caption(s.caption, vocab, model.max_caption_len));
    d.sg_targets.push_back(scene_graph_targets(s, sg_mode, vocab, model.max_triplets));
    d.references.push_back(normalize_caption(s.caption));
    if (features) {
      d.features_a.push_back(lookup(s, s.image_a));
      d.features_b.push_back(lookup(s, s.image_b));
      continue;
    }
    Image a = read_png(split.resolve(s.image_a));
    Image b = read_png(split.resolve(s.image_b));
    if (a.width != model.image_size || a.height != model.image_size) {
      throw ShapeError("sample " + s.id + ": image is " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                       ", model expects " + std::to_string(model.image_size) + "x" +
                       std::to_string(model.image_size));
    }
    d.images_a.push_back(std::move(a));
    d.images_b.push_back(std::move(b));
  }
  return d;
}

FeatureStore load_configured_features(const ExperimentConfig& cfg, const std::filesystem::path& dataset_dir) {
  if (cfg.train.features.empty()) return {};
  std::filesystem::path p = cfg.train.features;
  if (p.is_relative()) p = (std::filesystem::is_directory(dataset_dir) ? dataset_dir : dataset_dir.parent_path()) / p;
  return load_feature_file(p);
}

Batch make_batch(const PreparedData& data, const std::vector<std::size_t>& indices, bool with_sg) {
  Batch b;
  const int n = static_cast<int>(indices.size());
  if (n == 0) throw ShapeError("empty batch");
  if (data.precomputed()) {
    const FeatureMap& first = data.features_a[indices.front()];
    const Eigen::Index p = first.locations();
    b.features_a.resize(first.channels, p * n);
    b.features_b.resize(first.channels, p * n);
    for (int j = 0; j < n; ++j) {
      const std::size_t i = indices[static_cast<std::size_t>(j)];
      const FeatureMap& fa = data.features_a[i];
      const FeatureMap& fb = data.features_b[i];
      if (fa.values.rows() != first.channels || fa.values.cols() != p || fb.values.rows() != first.channels ||
          fb.values.cols() != p) {
        throw ShapeError("sample " + data.ids[i] + ": precomputed feature maps differ in shape");
      }
      b.features_a.middleCols(j * p, p) = fa.values;
      b.features_b.middleCols(j * p, p) = fb.values;
    }
  } else {
    const Image& first = data.images_a[indices.front()];
    const Eigen::Index hw = static_cast<Eigen::Index>(first.width) * first.height;
    b.images_a.resize(3, hw * n);
    b.images_b.resize(3, hw * n);
  }
  const int t = static_cast<int>(data.captions[indices.front()].size()) - 1;
  b.caption_inputs.resize(t, n);
  b.caption_targets.resize(t, n);
  const int st = static_cast<int>(data.sg_targets[indices.front()].size());
  if (with_sg) {
    b.sg_inputs.resize(st, n);
    b.sg_targets.resize(st, n);
  }
  for (int j = 0; j < n; ++j) {
    const std::size_t i = indices[static_cast<std::size_t>(j)];
    b.ids.push_back(data.ids[i]);
    if (!data.precomputed()) {
      pack_image(data.images_a[i], b.images_a, j);
      pack_image(data.images_b[i], b.images_b, j);
    }
    const auto& cap = data.captions[i];
    for (int k = 0; k < t; ++k) {
      b.caption_inputs(k, j) = cap[static_cast<std::size_t>(k)];
      b.caption_targets(k, j) = cap[static_cast<std::size_t>(k) + 1];
    }
    if (with_sg) {
      const auto inputs = shifted_inputs(data.sg_targets[i]);
      for (int k = 0; k < st; ++k) {
        b.sg_inputs(k, j) = inputs[static_cast<std::size_t>(k)];
        b.sg_targets(k, j) = data.sg_targets[i][static_cast<std::size_t>(k)];
      }
    }
  }
  return b;
}

std::vector<std::vector<int>> caption_all(const CaptionModel& model, const PreparedData& data, int batch_size) {
  std::vector<std::vector<int>> out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      idx.push_back(i);
    }
    for (auto& c : model.caption(make_batch(data, idx, false))) out.push_back(std::move(c));
  }
  return out;
}

namespace {

double mean_bleu4(const std::vector<std::vector<int>>& captions, const PreparedData& data, const Vocabulary& vocab) {
  if (data.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    sum += bleu(ids_to_tokens(captions[i], vocab), {data.references[i]}, 4)[3];
  }
  return sum / static_cast<double>(data.size());
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

}  // namespace

TrainResult train(const std::filesystem::path& dataset_dir, const ExperimentConfig& cfg_in,
                  const std::filesystem::path& out_dir, std::ostream* progress) {
  ExperimentConfig cfg = cfg_in;
  cfg.loss.validate();
  if (cfg.train.batch_size < 1) throw ConfigError("batch_size must be positive");

  const DatasetSplit train_split = load_dataset(dataset_dir, Split::train);
  if (train_split.samples.empty()) throw LoadError("training split is empty");
  DatasetSplit dev_split;
  if (std::filesystem::is_directory(dataset_dir) && std::filesystem::exists(dataset_dir / "dev.jsonl")) {
    dev_split = load_dataset(dataset_dir, Split::dev);
  }
  if (cfg.train.max_dev_samples > 0 && dev_split.samples.size() > static_cast<std::size_t>(cfg.train.max_dev_samples)) {
    dev_split.samples.resize(static_cast<std::size_t>(cfg.train.max_dev_samples));
  }

  Vocabulary vocab = build_vocabulary(train_split.samples, cfg.train.min_count);
  const auto lexicon_path = dataset_dir / "lexicon.tsv";
  if (std::filesystem::is_directory(dataset_dir) && std::filesystem::exists(lexicon_path)) {
    apply_lexicon(vocab, load_lexicon(lexicon_path));
  }
  cfg.model.vocab_size = vocab.size();

  const bool use_sg = cfg.loss.uses_scene_graph();
  const FeatureStore features = load_configured_features(cfg, dataset_dir);
  const FeatureStore* store = cfg.train.features.empty() ? nullptr : &features;
  const PreparedData train_data = prepare_data(train_split, vocab, cfg.model, cfg.loss.sg_mode, store);
  const PreparedData dev_data = prepare_data(dev_split, vocab, cfg.model, cfg.loss.sg_mode, store);

  TrainResult result;
  TrainState& st = result.state;
  st.config = cfg;
  st.seed = cfg.train.seed;
  st.vocab = vocab;
  st.model = CaptionModel(cfg.model);
  st.model.init(cfg.train.seed);
  {
    std::vector<SceneGraphTriplet> all;
    for (const auto& s : train_split.samples) {
      for (const auto& t : target_triplets(s.graphs_a, s.graphs_b, TargetMode::all)) {
        all.push_back(encode_triplet(t, vocab));
      }
    }
    st.model.role_masks = RoleMasks::from_triplets(all, vocab.size());
  }
  st.optimizer = Optimizer(cfg.optimizer);

  std::filesystem::create_directories(out_dir / "checkpoints");
  {
    nlohmann::ordered_json echo;
    echo["dataset"] = std::filesystem::absolute(dataset_dir).lexically_normal().string();
    echo["train_samples"] = train_data.size();
    echo["dev_samples"] = dev_data.size();
    echo["vocab_size"] = vocab.size();
    echo["vocab_hash"] = vocab.hash();
    echo["config"] = config_to_json(cfg);
    write_text_file(out_dir / "config.json", echo.dump(2) + "\n");
  }
  vocab.save(out_dir / "vocab.txt");

  std::string log_text = epoch_log_header();
  write_text_file(out_dir / "train_log.tsv", log_text);

  CaptionModel grads = st.model.zeros_like();
  auto params = st.model.parameters();
  auto gparams = grads.parameters();
  std::vector<std::size_t> order(train_data.size());
  std::vector<std::filesystem::path> kept;

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double alpha = alpha_schedule(epoch, cfg.loss);
    const double lr = lr_schedule(epoch, cfg.lr);
    const LossWeights weights{alpha, cfg.loss.lambda_l1, cfg.loss.lambda_ent, use_sg};

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.train.seed, 1000003ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog row;
    row.epoch = epoch;
    row.alpha = alpha;
    row.lr = lr;
    double seen = 0.0;
    const auto bs = static_cast<std::size_t>(cfg.train.batch_size);
    for (std::size_t start = 0, batch_index = 0; start < order.size(); start += bs, ++batch_index) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      const Batch batch = make_batch(train_data, idx, use_sg && alpha < 1.0);
      grads.set_zero();
      const LossBreakdown loss = st.model.forward_backward(batch, weights, &grads);
      if (!std::isfinite(loss.total)) {
        std::string ids;
        for (std::size_t k = 0; k < batch.ids.size() && k < 8; ++k) ids += (k ? "," : "") + batch.ids[k];
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index) + " (samples " + ids + (batch.ids.size() > 8 ? ",..." : "") +
                            ")");
      }
      st.optimizer.step(params, gparams, lr);
      ++st.step;
      const double w = static_cast<double>(idx.size());
      row.loss_cap += w * loss.caption;
      row.loss_sgr += w * loss.scene_graph;
      row.l1 += w * loss.l1;
      row.entropy_cap += w * loss.entropy_caption;
      row.entropy_sgr += w * loss.entropy_scene_graph;
      row.loss_total += w * loss.total;
      seen += w;
    }
    for (double* v : {&row.loss_cap, &row.loss_sgr, &row.l1, &row.entropy_cap, &row.entropy_sgr, &row.loss_total}) {
      *v /= seen;
    }
    st.epoch = epoch + 1;
    row.dev_bleu4 = dev_data.size() > 0 ? mean_bleu4(caption_all(st.model, dev_data), dev_data, vocab) : 0.0;

    result.log.push_back(row);
    log_text += format_epoch_log(row);
    write_text_file(out_dir / "train_log.tsv", log_text);

    const auto ckpt = out_dir / "checkpoints" / epoch_name(epoch);
    save_checkpoint(ckpt, st);
    kept.push_back(ckpt);
    if (cfg.train.keep_checkpoints > 0 && kept.size() > static_cast<std::size_t>(cfg.train.keep_checkpoints)) {
      std::filesystem::remove(kept.front());
      kept.erase(kept.begin());
    }
    if (row.dev_bleu4 > result.best_dev_bleu4) {
      result.best_dev_bleu4 = row.dev_bleu4;
      result.best_epoch = epoch;
      save_checkpoint(out_dir / "checkpoints" / "best.ckpt", st);
    }
    if (progress) {
      *progress << "epoch " << epoch << " alpha=" << alpha << " lr=" << lr << " loss_cap=" << row.loss_cap
                << " loss_sgr=" << row.loss_sgr << " dev_bleu4=" << row.dev_bleu4 << std::endl;
    }
  }
  save_checkpoint(out_dir / "checkpoints" / "last.ckpt", st);
  return result;
}

}  // namespace opcap
