#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <random>
#include <vector>

#include "opcap/image.hpp"
#include "opcap/tensor.hpp"

namespace opcap {

enum class Provenance { image_a, image_b, difference };

/// Localized features of one image: values is C x (H*W), location index y*W + x.
struct FeatureMap {
  Matrix values;
  int channels = 0;
  int height = 0;
  int width = 0;
  Provenance provenance = Provenance::image_a;

  int locations() const { return height * width; }
};

/// Per-location weights in [0, 1], laid out like FeatureMap columns.
struct AttentionMap {
  RowVector weights;
  int height = 0;
  int width = 0;
};

struct FeatureBundle {
  Vector l_a;
  Vector l_b;
  Vector l_diff;
  FeatureMap x_a;
  FeatureMap x_b;
  FeatureMap x_diff;
  AttentionMap a_a;
  AttentionMap a_b;
};

struct ConvSpec {
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  bool operator==(const ConvSpec&) const = default;
};

/// Stack of valid (unpadded) convolutions, each followed by ReLU.
///
/// Batches are packed side by side: a C x (H*W*N) matrix holds N samples, and
/// every layer runs as one im2col GEMM over the whole batch.
class ConvEncoder {
 public:
  struct Geometry {
    int in_channels, in_height, in_width;
    int out_channels, out_height, out_width;
    int kernel, stride;
  };

  struct Cache {
    std::vector<Matrix> columns;      // im2col input of each layer
    std::vector<Matrix> activations;  // post-ReLU output of each layer
    int batch = 0;
  };

  ConvEncoder() = default;
  ConvEncoder(int in_channels, int height, int width, const std::vector<ConvSpec>& layers);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& input, int batch, Cache* cache) const;
  /// Accumulates parameter gradients; input gradients are not needed.
  void backward(const Cache& cache, const Matrix& d_output, ConvEncoder& grads) const;

  int out_channels() const { return geometry_.empty() ? in_channels_ : geometry_.back().out_channels; }
  int out_height() const { return geometry_.empty() ? in_height_ : geometry_.back().out_height; }
  int out_width() const { return geometry_.empty() ? in_width_ : geometry_.back().out_width; }
  int in_channels() const { return in_channels_; }
  int in_height() const { return in_height_; }
  int in_width() const { return in_width_; }
  const std::vector<Geometry>& geometry() const { return geometry_; }

  std::vector<NamedParam> parameters(const std::string& prefix);

  std::vector<Matrix> weights;  // out x (in*k*k)
  std::vector<Matrix> biases;   // out x 1

 private:
  int in_channels_ = 3;
  int in_height_ = 0;
  int in_width_ = 0;
  std::vector<Geometry> geometry_;
};

/// Logistic spatial attention over [x; x_diff] with a one-hidden-layer 1x1 map.
class SpatialAttention {
 public:
  struct Cache {
    Matrix stacked;  // 2C x L
    Matrix hidden;   // A x L, post-ReLU
    RowVector weights;
  };

  SpatialAttention() = default;
  SpatialAttention(int channels, int hidden);

  void init(std::mt19937_64& rng);
  RowVector forward(const Matrix& x, const Matrix& x_diff, Cache* cache) const;
  RowVector logits(const Matrix& x, const Matrix& x_diff) const;
  /// d_weights is the gradient w.r.t. the attention output; results accumulate into d_x, d_x_diff.
  void backward(const Cache& cache, const RowVector& d_weights, Matrix& d_x, Matrix& d_x_diff,
                SpatialAttention& grads) const;

  std::vector<NamedParam> parameters(const std::string& prefix);

  Matrix w1, b1, w2, b2;
};

/// Scales 8-bit RGB to [0, 1]; result is 3 x (H*W).
Matrix image_to_input(const Image& image);

FeatureMap encode_image(const Image& image, const ConvEncoder& encoder);
/// x_a - x_b.
FeatureMap compute_difference(const FeatureMap& x_a, const FeatureMap& x_b);
AttentionMap spatial_attention(const FeatureMap& x, const FeatureMap& x_diff, const SpatialAttention& attention);
/// Per-channel sum over locations of a(h,w) * x(c,h,w).
Vector attended_feature(const FeatureMap& x, const AttentionMap& a);
/// Attends x_diff with the location-wise maximum of the two attentions.
Vector attended_difference(const FeatureMap& x_diff, const AttentionMap& a_a, const AttentionMap& a_b);
FeatureBundle make_bundle(FeatureMap x_a, FeatureMap x_b, const SpatialAttention& attention);

/// Precomputed encoder outputs keyed by image reference.
using FeatureStore = std::map<std::string, FeatureMap>;

/// Little-endian layout: "OPCAPFT1", u32 record count, then per record a u32
/// key length, the key bytes, u32 C, u32 H, u32 W and C*H*W f64 values
/// (channel-major, location index y*W + x).
void save_feature_file(const std::filesystem::path& path, const FeatureStore& features);
FeatureStore load_feature_file(const std::filesystem::path& path);

}  // namespace opcap
