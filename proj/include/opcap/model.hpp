#pragma once

#include <string>
#include <vector>

#include "opcap/decoder.hpp"
#include "opcap/encoder.hpp"
#include "opcap/sg_head.hpp"

namespace opcap {

struct ModelConfig {
  int image_size = 64;
  std::vector<ConvSpec> conv = {{32, 4, 4}, {64, 2, 2}};
  int spatial_hidden = 32;
  int embed_dim = 64;
  int hidden_dim = 128;
  int attention_dim = 64;
  bool per_step_attention = true;
  bool train_encoder = true;
  int max_caption_len = 16;  // including BOS and EOS
  int max_triplets = 16;
  int vocab_size = 0;        // filled from the vocabulary at training time

  bool operator==(const ModelConfig&) const = default;
};

/// One mini-batch. Either raw images (3 x H*W*N, values in [0, 1]) or
/// precomputed encoder outputs (C x P*N) are supplied.
struct Batch {
  std::vector<std::string> ids;
  Matrix images_a, images_b;
  Matrix features_a, features_b;
  IndexMatrix caption_inputs, caption_targets;  // T x N
  IndexMatrix sg_inputs, sg_targets;            // (3M+1) x N, may be empty

  int size() const { return static_cast<int>(ids.size()); }
  bool precomputed() const { return features_a.size() > 0; }
};

/// Weights of the two loss branches for one step.
struct LossWeights {
  double alpha = 1.0;
  double lambda_l1 = 0.0;
  double lambda_ent = 0.0;
  bool use_scene_graph = false;
};

struct LossBreakdown {
  double caption = 0.0;
  double scene_graph = 0.0;
  double l1 = 0.0;
  double entropy_caption = 0.0;
  double entropy_scene_graph = 0.0;
  double total = 0.0;
};

struct Streams {
  Matrix x_a, x_b, x_diff;  // C x P*N
  RowVector a_a, a_b;       // 1 x P*N
  StreamBatch l;
};

class CaptionModel {
 public:
  CaptionModel() = default;
  explicit CaptionModel(const ModelConfig& config);

  void init(std::uint64_t seed);
  const ModelConfig& config() const { return config_; }

  /// Returns the loss; when `grads` is non-null, accumulates parameter gradients into it.
  LossBreakdown forward_backward(const Batch& batch, const LossWeights& weights, CaptionModel* grads) const;

  /// Encoder outputs for packed images (3 x H*W*N).
  Matrix encode(const Matrix& images, int n) const;
  Streams streams(const Matrix& x_a, const Matrix& x_b, int n) const;
  Streams streams(const Batch& batch) const;
  FeatureBundle bundle(const Image& a, const Image& b) const;

  /// Greedy captions (ids after BOS, up to and including EOS) for every sample.
  std::vector<std::vector<int>> caption(const Batch& batch) const;
  std::vector<int> caption(const Image& a, const Image& b, SearchStrategy strategy = {}) const;
  std::vector<int> caption(const FeatureMap& x_a, const FeatureMap& x_b, SearchStrategy strategy = {}) const;

  std::vector<NamedParam> parameters();
  /// Same shapes, all zeros.
  CaptionModel zeros_like() const;
  void set_zero();
  std::size_t parameter_count();

  int locations() const { return encoder.out_height() * encoder.out_width(); }

  ConvEncoder encoder;
  SpatialAttention attention;
  RecurrentHead captioner;
  RecurrentHead scene_graph;
  RoleMasks role_masks;

 private:
  ModelConfig config_;
};

/// Scales an image to [0, 1] and appends it to a packed 3 x H*W*N buffer at slot `index`.
void pack_image(const Image& image, Matrix& packed, int index);

}  // namespace opcap
