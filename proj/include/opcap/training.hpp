#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "opcap/dataset.hpp"
#include "opcap/decoder.hpp"
#include "opcap/encoder.hpp"
#include "opcap/metrics.hpp"
#include "opcap/model.hpp"

namespace opcap {

enum class AlphaKind { baseline, linear_int, alternative };

/// How the caption and scene-graph losses are mixed over epochs.
struct AlphaMode {
  AlphaKind kind = AlphaKind::baseline;
  double alpha = 1.0;      // linear_int
  double low = 0.0;        // alternative, used first
  double high = 1.0;       // alternative
  int period_epochs = 10;  // alternative

  static AlphaMode baseline() { return {}; }
  static AlphaMode linear_int(double a) { return {AlphaKind::linear_int, a, 0.0, 1.0, 10}; }
  static AlphaMode alternative(double lo, double hi, int period = 10) {
    return {AlphaKind::alternative, 1.0, lo, hi, period};
  }
  bool operator==(const AlphaMode&) const = default;
};

std::string_view to_string(AlphaKind k);
AlphaKind parse_alpha_kind(std::string_view s);

struct LossConfig {
  double lambda_l1 = 2.5e-3;
  double lambda_ent = 1e-4;
  AlphaMode alpha_mode;
  TargetMode sg_mode = TargetMode::all;

  /// Throws ConfigError when a weight or schedule parameter is out of range.
  void validate() const;
  bool uses_scene_graph() const { return alpha_mode.kind != AlphaKind::baseline; }
  bool operator==(const LossConfig&) const = default;
};

/// A loss together with its regularizer values.
struct LossTerms {
  double loss = 0.0;
  double l1 = 0.0;
  double entropy = 0.0;
};

/// L1: mean absolute attention over both maps. L_ent: mean entropy of the stream weights.
std::pair<double, double> regularizers(const AttentionMap& a_a, const AttentionMap& a_b,
                                       const std::vector<DynamicAttentionWeights>& dynamic_weights);
double baseline_loss(double l_cap, double l1, double l_ent, const LossConfig& cfg);
double combined_loss(const LossTerms& cap, const LossTerms& sgr, double alpha, const LossConfig& cfg);
double alpha_schedule(int epoch, const LossConfig& cfg);

struct LrSchedule {
  double base = 0.01;
  double factor = 0.1;
  int step_epochs = 20;
  bool operator==(const LrSchedule&) const = default;
};

/// base * factor^floor(epoch / step_epochs).
double lr_schedule(int epoch, const LrSchedule& schedule = {});

enum class OptimizerKind { sgd, adam };
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 5.0;  // 0 disables clipping
  bool operator==(const OptimizerConfig&) const = default;
};

/// SGD with momentum (v = mu v + g; theta -= lr v) or Adam, with optional global-norm clipping.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

  /// Returns the gradient norm before clipping.
  double step(const std::vector<NamedParam>& params, const std::vector<NamedParam>& grads, double lr);

  const OptimizerConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  /// Named state tensors (checkpoint keys without prefix).
  std::map<std::string, Matrix>& state() { return state_; }
  const std::map<std::string, Matrix>& state() const { return state_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, Matrix> state_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int min_count = 1;
  int max_dev_samples = 0;      // 0: the whole dev split
  int keep_checkpoints = 0;     // per-epoch checkpoints kept on disk; 0 keeps all
  std::string features;         // precomputed feature file; relative paths resolve against the dataset
  bool operator==(const TrainConfig&) const = default;
};

/// Every tunable in one place; serialized as nested JSON sections.
struct ExperimentConfig {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  LrSchedule lr;
  TrainConfig train;
  double rouge_beta = 1.2;
  bool operator==(const ExperimentConfig&) const = default;
};

struct EpochLog {
  int epoch = 0;
  double alpha = 1.0;
  double lr = 0.0;
  double loss_cap = 0.0;
  double loss_sgr = 0.0;
  double l1 = 0.0;
  double entropy_cap = 0.0;
  double entropy_sgr = 0.0;
  double loss_total = 0.0;
  double dev_bleu4 = 0.0;
};

std::string epoch_log_header();
std::string format_epoch_log(const EpochLog& row);
std::vector<EpochLog> parse_epoch_log(const std::string& text);

struct TrainState {
  int epoch = 0;  // epochs completed
  std::int64_t step = 0;
  std::uint64_t seed = 1;
  ExperimentConfig config;
  Vocabulary vocab;
  CaptionModel model;
  Optimizer optimizer;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_dev_bleu4 = -1.0;
};

/// In-memory training data: decoded images, caption ids and scene-graph targets.
struct PreparedData {
  std::vector<std::string> ids;
  std::vector<Image> images_a, images_b;
  std::vector<FeatureMap> features_a, features_b;  // filled instead of images when features are precomputed
  std::vector<std::vector<int>> captions;  // max_caption_len ids
  std::vector<std::vector<int>> sg_targets;
  std::vector<Tokens> references;           // normalized caption tokens

  std::size_t size() const { return ids.size(); }
  bool precomputed() const { return !features_a.empty(); }
};

/// Reads images, or looks up each image reference in `features` when given.
PreparedData prepare_data(const DatasetSplit& split, const Vocabulary& vocab, const ModelConfig& model,
                          TargetMode sg_mode, const FeatureStore* features = nullptr);
/// Empty store when `cfg.train.features` is unset.
FeatureStore load_configured_features(const ExperimentConfig& cfg, const std::filesystem::path& dataset_dir);
/// Packs samples [indices] into a batch; scene-graph targets are included when `with_sg`.
Batch make_batch(const PreparedData& data, const std::vector<std::size_t>& indices, bool with_sg);

/// Greedy captions for every prepared sample, in order.
std::vector<std::vector<int>> caption_all(const CaptionModel& model, const PreparedData& data, int batch_size = 64);

/// Trains from `dataset_dir` (train and dev splits) and writes logs and checkpoints into `out_dir`.
TrainResult train(const std::filesystem::path& dataset_dir, const ExperimentConfig& cfg,
                  const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

}  // namespace opcap
