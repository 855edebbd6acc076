#include "opcap/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "opcap/util.hpp"

namespace opcap {

namespace {

Matrix im2col(const Matrix& in, const ConvEncoder::Geometry& g, int batch) {
  const int k = g.kernel;
  const int in_locs = g.in_height * g.in_width;
  const int out_locs = g.out_height * g.out_width;
  Matrix cols(static_cast<Eigen::Index>(g.in_channels) * k * k, static_cast<Eigen::Index>(out_locs) * batch);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < g.out_height; ++oy) {
      for (int ox = 0; ox < g.out_width; ++ox) {
        const Eigen::Index col = static_cast<Eigen::Index>(n) * out_locs + oy * g.out_width + ox;
        double* dst = cols.col(col).data();
        for (int c = 0; c < g.in_channels; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const Eigen::Index base = static_cast<Eigen::Index>(n) * in_locs + (oy * g.stride + ky) * g.in_width +
                                      ox * g.stride;
            for (int kx = 0; kx < k; ++kx) *dst++ = in(c, base + kx);
          }
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, const ConvEncoder::Geometry& g, int batch) {
  const int k = g.kernel;
  const int in_locs = g.in_height * g.in_width;
  const int out_locs = g.out_height * g.out_width;
  Matrix in = Matrix::Zero(g.in_channels, static_cast<Eigen::Index>(in_locs) * batch);
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < g.out_height; ++oy) {
      for (int ox = 0; ox < g.out_width; ++ox) {
        const Eigen::Index col = static_cast<Eigen::Index>(n) * out_locs + oy * g.out_width + ox;
        const double* src = cols.col(col).data();
        for (int c = 0; c < g.in_channels; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const Eigen::Index base = static_cast<Eigen::Index>(n) * in_locs + (oy * g.stride + ky) * g.in_width +
                                      ox * g.stride;
            for (int kx = 0; kx < k; ++kx) in(c, base + kx) += *src++;
          }
        }
      }
    }
  }
  return in;
}

void check_same_shape(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": feature map shapes differ");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ConvEncoder::ConvEncoder(int in_channels, int height, int width, const std::vector<ConvSpec>& layers)
    : in_channels_(in_channels), in_height_(height), in_width_(width) {
  int c = in_channels, h = height, w = width;
  for (const auto& spec : layers) {
    if (spec.out_channels < 1 || spec.kernel < 1 || spec.stride < 1) throw ConfigError("invalid conv layer spec");
    if (spec.kernel > h || spec.kernel > w) throw ConfigError("conv kernel larger than its input");
    Geometry g{c, h, w, spec.out_channels, (h - spec.kernel) / spec.stride + 1, (w - spec.kernel) / spec.stride + 1,
               spec.kernel, spec.stride};
    geometry_.push_back(g);
    weights.emplace_back(Matrix::Zero(g.out_channels, static_cast<Eigen::Index>(c) * spec.kernel * spec.kernel));
    biases.emplace_back(Matrix::Zero(g.out_channels, 1));
    c = g.out_channels;
    h = g.out_height;
    w = g.out_width;
  }
}

void ConvEncoder::init(std::mt19937_64& rng) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    init_uniform(weights[i], std::sqrt(6.0 / static_cast<double>(weights[i].cols())), rng);
    biases[i].setZero();
  }
}

Matrix ConvEncoder::forward(const Matrix& input, int batch, Cache* cache) const {
  if (input.rows() != in_channels_ || input.cols() != static_cast<Eigen::Index>(in_height_) * in_width_ * batch) {
    throw ShapeError("encoder input is " + std::to_string(input.rows()) + "x" + std::to_string(input.cols()) +
                     ", expected " + std::to_string(in_channels_) + "x" +
                     std::to_string(static_cast<long>(in_height_) * in_width_ * batch));
  }
  if (cache) {
    cache->columns.clear();
    cache->activations.clear();
    cache->batch = batch;
  }
  Matrix x = input;
  for (std::size_t i = 0; i < geometry_.size(); ++i) {
    Matrix cols = im2col(x, geometry_[i], batch);
    Matrix z = weights[i] * cols;
    z.colwise() += biases[i].col(0);
    x = z.cwiseMax(0.0);
    if (cache) {
      cache->columns.push_back(std::move(cols));
      cache->activations.push_back(x);
    }
  }
  return x;
}

void ConvEncoder::backward(const Cache& cache, const Matrix& d_output, ConvEncoder& grads) const {
  Matrix d = d_output;
  for (std::size_t i = geometry_.size(); i-- > 0;) {
    d = d.cwiseProduct((cache.activations[i].array() > 0.0).cast<double>().matrix());
    grads.weights[i].noalias() += d * cache.columns[i].transpose();
    grads.biases[i] += d.rowwise().sum();
    if (i > 0) {
      Matrix d_cols = weights[i].transpose() * d;
      d = col2im(d_cols, geometry_[i], cache.batch);
    }
  }
}

std::vector<NamedParam> ConvEncoder::parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back({prefix + "conv" + std::to_string(i) + ".weight", &weights[i]});
    out.push_back({prefix + "conv" + std::to_string(i) + ".bias", &biases[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------

SpatialAttention::SpatialAttention(int channels, int hidden)
    : w1(Matrix::Zero(hidden, 2 * channels)),
      b1(Matrix::Zero(hidden, 1)),
      w2(Matrix::Zero(1, hidden)),
      b2(Matrix::Zero(1, 1)) {}

void SpatialAttention::init(std::mt19937_64& rng) {
  init_uniform(w1, std::sqrt(6.0 / static_cast<double>(w1.cols())), rng);
  init_uniform(w2, std::sqrt(3.0 / static_cast<double>(w2.cols())), rng);
  b1.setZero();
  b2.setZero();
}

RowVector SpatialAttention::logits(const Matrix& x, const Matrix& x_diff) const {
  Cache c;
  forward(x, x_diff, &c);
  Matrix z = w2 * c.hidden;
  z.array() += b2(0, 0);
  return z.row(0);
}

RowVector SpatialAttention::forward(const Matrix& x, const Matrix& x_diff, Cache* cache) const {
  if (x.rows() != x_diff.rows() || x.cols() != x_diff.cols() || 2 * x.rows() != w1.cols()) {
    throw ShapeError("spatial attention: input shapes do not match the attention parameters");
  }
  Matrix stacked(2 * x.rows(), x.cols());
  stacked.topRows(x.rows()) = x;
  stacked.bottomRows(x.rows()) = x_diff;
  Matrix hidden = w1 * stacked;
  hidden.colwise() += b1.col(0);
  hidden = hidden.cwiseMax(0.0);
  Matrix z = w2 * hidden;
  z.array() += b2(0, 0);
  RowVector a = z.row(0).unaryExpr([](double v) { return sigmoid(v); });
  if (cache) {
    cache->stacked = std::move(stacked);
    cache->hidden = std::move(hidden);
    cache->weights = a;
  }
  return a;
}

void SpatialAttention::backward(const Cache& cache, const RowVector& d_weights, Matrix& d_x, Matrix& d_x_diff,
                                SpatialAttention& grads) const {
  const RowVector dz = d_weights.cwiseProduct(cache.weights.cwiseProduct((1.0 - cache.weights.array()).matrix()));
  grads.w2.noalias() += dz * cache.hidden.transpose();
  grads.b2(0, 0) += dz.sum();
  Matrix d_hidden = w2.transpose() * dz;
  d_hidden = d_hidden.cwiseProduct((cache.hidden.array() > 0.0).cast<double>().matrix());
  grads.w1.noalias() += d_hidden * cache.stacked.transpose();
  grads.b1 += d_hidden.rowwise().sum();
  const Matrix d_stacked = w1.transpose() * d_hidden;
  const Eigen::Index c = d_x.rows();
  d_x += d_stacked.topRows(c);
  d_x_diff += d_stacked.bottomRows(c);
}

std::vector<NamedParam> SpatialAttention::parameters(const std::string& prefix) {
  return {{prefix + "w1", &w1}, {prefix + "b1", &b1}, {prefix + "w2", &w2}, {prefix + "b2", &b2}};
}

// ---------------------------------------------------------------------------

Matrix image_to_input(const Image& image) {
  Matrix m(3, static_cast<Eigen::Index>(image.width) * image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto* p = image.pixel(x, y);
      for (int c = 0; c < 3; ++c) m(c, y * image.width + x) = p[c] / 255.0;
    }
  }
  return m;
}

FeatureMap encode_image(const Image& image, const ConvEncoder& encoder) {
  if (image.height != encoder.in_height() || image.width != encoder.in_width()) {
    throw ShapeError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     ", encoder expects " + std::to_string(encoder.in_width()) + "x" +
                     std::to_string(encoder.in_height()));
  }
  FeatureMap fm;
  fm.values = encoder.forward(image_to_input(image), 1, nullptr);
  fm.channels = encoder.out_channels();
  fm.height = encoder.out_height();
  fm.width = encoder.out_width();
  return fm;
}

FeatureMap compute_difference(const FeatureMap& x_a, const FeatureMap& x_b) {
  check_same_shape(x_a, x_b, "compute_difference");
  FeatureMap d = x_a;
  d.values = x_a.values - x_b.values;
  d.provenance = Provenance::difference;
  return d;
}

AttentionMap spatial_attention(const FeatureMap& x, const FeatureMap& x_diff, const SpatialAttention& attention) {
  check_same_shape(x, x_diff, "spatial_attention");
  return {attention.forward(x.values, x_diff.values, nullptr), x.height, x.width};
}

Vector attended_feature(const FeatureMap& x, const AttentionMap& a) {
  if (x.height != a.height || x.width != a.width || a.weights.size() != x.values.cols()) {
    throw ShapeError("attended_feature: attention and feature map sizes differ");
  }
  return x.values * a.weights.transpose();
}

Vector attended_difference(const FeatureMap& x_diff, const AttentionMap& a_a, const AttentionMap& a_b) {
  if (a_a.height != a_b.height || a_a.width != a_b.width) throw ShapeError("attended_difference: attention sizes differ");
  AttentionMap m{a_a.weights.cwiseMax(a_b.weights), a_a.height, a_a.width};
  return attended_feature(x_diff, m);
}

FeatureBundle make_bundle(FeatureMap x_a, FeatureMap x_b, const SpatialAttention& attention) {
  FeatureBundle b;
  x_a.provenance = Provenance::image_a;
  x_b.provenance = Provenance::image_b;
  b.x_diff = compute_difference(x_a, x_b);
  b.a_a = spatial_attention(x_a, b.x_diff, attention);
  b.a_b = spatial_attention(x_b, b.x_diff, attention);
  b.l_a = attended_feature(x_a, b.a_a);
  b.l_b = attended_feature(x_b, b.a_b);
  b.l_diff = attended_difference(b.x_diff, b.a_a, b.a_b);
  b.x_a = std::move(x_a);
  b.x_b = std::move(x_b);
  return b;
}

}  // namespace opcap

namespace opcap {

namespace {

static_assert(std::endian::native == std::endian::little, "feature file I/O assumes a little-endian host");

constexpr char kFeatureMagic[8] = {'O', 'P', 'C', 'A', 'P', 'F', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t take_u32(std::istream& is, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError(path.string() + ": truncated feature file");
  return v;
}

}  // namespace

void save_feature_file(const std::filesystem::path& path, const FeatureStore& features) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot write " + path.string());
  os.write(kFeatureMagic, sizeof kFeatureMagic);
  put_u32(os, static_cast<std::uint32_t>(features.size()));
  for (const auto& [key, map] : features) {
    if (map.values.rows() != map.channels || map.values.cols() != map.locations()) {
      throw ShapeError("feature map '" + key + "' does not match its declared shape");
    }
    put_u32(os, static_cast<std::uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    put_u32(os, static_cast<std::uint32_t>(map.channels));
    put_u32(os, static_cast<std::uint32_t>(map.height));
    put_u32(os, static_cast<std::uint32_t>(map.width));
    // Row-major so that each channel is contiguous.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = map.values;
    os.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(double)));
  }
  if (!os) throw LoadError("failed writing " + path.string());
}

FeatureStore load_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open feature file " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0) {
    throw LoadError(path.string() + ": not a feature file");
  }
  FeatureStore out;
  const std::uint32_t count = take_u32(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string key(take_u32(is, path), '\0');
    if (!is.read(key.data(), static_cast<std::streamsize>(key.size()))) {
      throw LoadError(path.string() + ": truncated feature file");
    }
    FeatureMap map;
    map.channels = static_cast<int>(take_u32(is, path));
    map.height = static_cast<int>(take_u32(is, path));
    map.width = static_cast<int>(take_u32(is, path));
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(map.channels, map.locations());
    if (!is.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(double)))) {
      throw LoadError(path.string() + ": truncated feature file");
    }
    map.values = rows;
    if (!out.emplace(std::move(key), std::move(map)).second) {
      throw LoadError(path.string() + ": duplicate feature key");
    }
  }
  return out;
}

}  // namespace opcap
