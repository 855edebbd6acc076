#include "opcap/model.hpp"

#include "opcap/util.hpp"

namespace opcap {

namespace {

HeadConfig head_config(const ModelConfig& c, int feature_dim) {
  if (c.vocab_size < Vocabulary::kReserved) throw ConfigError("model vocabulary size is not set");
  return {feature_dim, c.embed_dim, c.hidden_dim, c.attention_dim, c.vocab_size, c.per_step_attention};
}

// Per-sample attended sums over P locations: out.col(n) = x_block(n) * a_block(n)^T.
Matrix attend_blocks(const Matrix& x, const RowVector& a, int p, int n) {
  Matrix out(x.rows(), n);
  for (int j = 0; j < n; ++j) {
    out.col(j) = x.middleCols(static_cast<Eigen::Index>(j) * p, p) *
                 a.segment(static_cast<Eigen::Index>(j) * p, p).transpose();
  }
  return out;
}

}  // namespace

void pack_image(const Image& image, Matrix& packed, int index) {
  const Eigen::Index hw = static_cast<Eigen::Index>(image.width) * image.height;
  if (packed.rows() != 3 || packed.cols() < hw * (index + 1)) throw ShapeError("packed image buffer too small");
  const Eigen::Index base = hw * index;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto* px = image.pixel(x, y);
      for (int c = 0; c < 3; ++c) packed(c, base + y * image.width + x) = px[c] / 255.0;
    }
  }
}

CaptionModel::CaptionModel(const ModelConfig& config)
    : encoder(3, config.image_size, config.image_size, config.conv),
      attention(encoder.out_channels(), config.spatial_hidden),
      captioner(head_config(config, encoder.out_channels())),
      scene_graph(head_config(config, encoder.out_channels())),
      config_(config) {
  if (config.max_caption_len < 3) throw ConfigError("max_caption_len must be at least 3");
  if (config.max_triplets < 1) throw ConfigError("max_triplets must be at least 1");
  if (config.spatial_hidden < 1) throw ConfigError("spatial_hidden must be positive");
}

void CaptionModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0));
  encoder.init(rng);
  attention.init(rng);
  captioner.init(rng);
  scene_graph.init(rng);
}

std::vector<NamedParam> CaptionModel::parameters() {
  std::vector<NamedParam> out = encoder.parameters("encoder.");
  for (auto& p : attention.parameters("spatial_attention.")) out.push_back(p);
  for (auto& p : captioner.parameters("captioner.")) out.push_back(p);
  for (auto& p : scene_graph.parameters("scene_graph.")) out.push_back(p);
  return out;
}

CaptionModel CaptionModel::zeros_like() const {
  CaptionModel z = *this;
  z.set_zero();
  return z;
}

void CaptionModel::set_zero() {
  for (auto& p : parameters()) p.value->setZero();
}

std::size_t CaptionModel::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += static_cast<std::size_t>(p.value->size());
  return n;
}

Matrix CaptionModel::encode(const Matrix& images, int n) const { return encoder.forward(images, n, nullptr); }

Streams CaptionModel::streams(const Matrix& x_a, const Matrix& x_b, int n) const {
  const int p = locations();
  if (x_a.rows() != encoder.out_channels() || x_a.cols() != static_cast<Eigen::Index>(p) * n ||
      x_b.rows() != x_a.rows() || x_b.cols() != x_a.cols()) {
    throw ShapeError("feature maps do not match the encoder output shape");
  }
  Streams s;
  s.x_a = x_a;
  s.x_b = x_b;
  s.x_diff = x_a - x_b;
  s.a_a = attention.forward(s.x_a, s.x_diff, nullptr);
  s.a_b = attention.forward(s.x_b, s.x_diff, nullptr);
  s.l.a = attend_blocks(s.x_a, s.a_a, p, n);
  s.l.b = attend_blocks(s.x_b, s.a_b, p, n);
  s.l.diff = attend_blocks(s.x_diff, s.a_a.cwiseMax(s.a_b), p, n);
  return s;
}

Streams CaptionModel::streams(const Batch& batch) const {
  const int n = batch.size();
  if (batch.precomputed()) return streams(batch.features_a, batch.features_b, n);
  return streams(encode(batch.images_a, n), encode(batch.images_b, n), n);
}

FeatureBundle CaptionModel::bundle(const Image& a, const Image& b) const {
  return make_bundle(encode_image(a, encoder), encode_image(b, encoder), attention);
}

std::vector<std::vector<int>> CaptionModel::caption(const Batch& batch) const {
  const Streams s = streams(batch);
  const int steps = config_.max_caption_len - 1;
  const IndexMatrix ids = captioner.greedy(s.l, steps, Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kPad);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(batch.size()));
  for (int j = 0; j < batch.size(); ++j) {
    for (int t = 0; t < steps; ++t) {
      out[static_cast<std::size_t>(j)].push_back(ids(t, j));
      if (ids(t, j) == Vocabulary::kEos) break;
    }
  }
  return out;
}

std::vector<int> CaptionModel::caption(const Image& a, const Image& b, SearchStrategy strategy) const {
  return generate(bundle(a, b), captioner, strategy, config_.max_caption_len - 1);
}

std::vector<int> CaptionModel::caption(const FeatureMap& x_a, const FeatureMap& x_b, SearchStrategy strategy) const {
  if (x_a.channels != encoder.out_channels() || x_a.locations() != locations() || x_b.channels != x_a.channels ||
      x_b.locations() != x_a.locations()) {
    throw ShapeError("feature maps do not match the encoder output shape");
  }
  return generate(make_bundle(x_a, x_b, attention), captioner, strategy, config_.max_caption_len - 1);
}

LossBreakdown CaptionModel::forward_backward(const Batch& batch, const LossWeights& w, CaptionModel* grads) const {
  if (w.alpha < 0.0 || w.alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  const int n = batch.size();
  const int p = locations();
  const bool use_sg = w.use_scene_graph && w.alpha < 1.0;
  if (use_sg && batch.sg_targets.size() == 0) throw ShapeError("batch has no scene-graph targets");

  // Encoder: both images in one pass.
  ConvEncoder::Cache enc_cache;
  Matrix x;
  const bool enc_grad = grads && config_.train_encoder && !batch.precomputed();
  if (batch.precomputed()) {
    x.resize(batch.features_a.rows(), batch.features_a.cols() * 2);
    x << batch.features_a, batch.features_b;
  } else {
    Matrix images(3, batch.images_a.cols() * 2);
    images << batch.images_a, batch.images_b;
    x = encoder.forward(images, 2 * n, enc_grad ? &enc_cache : nullptr);
  }
  const Eigen::Index pn = static_cast<Eigen::Index>(p) * n;
  if (x.cols() != 2 * pn) throw ShapeError("feature maps do not match the batch size");
  const Matrix x_a = x.leftCols(pn), x_b = x.rightCols(pn);
  const Matrix x_diff = x_a - x_b;

  SpatialAttention::Cache att_a, att_b;
  const RowVector a_a = attention.forward(x_a, x_diff, &att_a);
  const RowVector a_b = attention.forward(x_b, x_diff, &att_b);
  const RowVector a_max = a_a.cwiseMax(a_b);
  StreamBatch l{attend_blocks(x_a, a_a, p, n), attend_blocks(x_b, a_b, p, n), attend_blocks(x_diff, a_max, p, n)};

  LossBreakdown out;
  out.l1 = (a_a.sum() + a_b.sum()) / (2.0 * static_cast<double>(pn));

  RecurrentHead::Cache cap_cache, sg_cache;
  {
    const auto r = captioner.teacher_forced(l, batch.caption_inputs, batch.caption_targets, grads ? &cap_cache : nullptr);
    out.caption = r.xent;
    out.entropy_caption = r.entropy;
  }
  if (use_sg) {
    const auto r = scene_graph.teacher_forced(l, batch.sg_inputs, batch.sg_targets, grads ? &sg_cache : nullptr);
    out.scene_graph = r.xent;
    out.entropy_scene_graph = r.entropy;
  }
  const double cap_branch = out.caption + w.lambda_l1 * out.l1 - w.lambda_ent * out.entropy_caption;
  const double sg_branch = out.scene_graph + w.lambda_l1 * out.l1 - w.lambda_ent * out.entropy_scene_graph;
  const double alpha = use_sg ? w.alpha : 1.0;
  out.total = use_sg ? alpha * cap_branch + (1.0 - alpha) * sg_branch : cap_branch;
  if (!grads) return out;

  // Head gradients w.r.t. the three streams.
  StreamBatch dl{Matrix::Zero(l.a.rows(), n), Matrix::Zero(l.b.rows(), n), Matrix::Zero(l.diff.rows(), n)};
  if (alpha > 0.0) {
    captioner.backward(cap_cache, alpha, -alpha * w.lambda_ent, dl, grads->captioner);
  }
  if (use_sg && alpha < 1.0) {
    scene_graph.backward(sg_cache, 1.0 - alpha, -(1.0 - alpha) * w.lambda_ent, dl, grads->scene_graph);
  }

  // Streams back to feature maps and attention maps.
  Matrix d_xa = Matrix::Zero(x_a.rows(), pn), d_xb = Matrix::Zero(x_a.rows(), pn), d_xd = Matrix::Zero(x_a.rows(), pn);
  const double l1_coef = w.lambda_l1 * (use_sg ? 1.0 : alpha) / (2.0 * static_cast<double>(pn));
  RowVector d_aa = RowVector::Constant(pn, l1_coef), d_ab = RowVector::Constant(pn, l1_coef);
  for (int j = 0; j < n; ++j) {
    const Eigen::Index off = static_cast<Eigen::Index>(j) * p;
    d_xa.middleCols(off, p).noalias() += dl.a.col(j) * a_a.segment(off, p);
    d_aa.segment(off, p).noalias() += dl.a.col(j).transpose() * x_a.middleCols(off, p);
    d_xb.middleCols(off, p).noalias() += dl.b.col(j) * a_b.segment(off, p);
    d_ab.segment(off, p).noalias() += dl.b.col(j).transpose() * x_b.middleCols(off, p);
    d_xd.middleCols(off, p).noalias() += dl.diff.col(j) * a_max.segment(off, p);
    const RowVector d_max = dl.diff.col(j).transpose() * x_diff.middleCols(off, p);
    for (int q = 0; q < p; ++q) {
      if (a_a[off + q] >= a_b[off + q]) {
        d_aa[off + q] += d_max[q];
      } else {
        d_ab[off + q] += d_max[q];
      }
    }
  }
  attention.backward(att_a, d_aa, d_xa, d_xd, grads->attention);
  attention.backward(att_b, d_ab, d_xb, d_xd, grads->attention);
  d_xa += d_xd;
  d_xb -= d_xd;

  if (enc_grad) {
    Matrix dx(x.rows(), 2 * pn);
    dx << d_xa, d_xb;
    encoder.backward(enc_cache, dx, grads->encoder);
  }
  return out;
}

}  // namespace opcap
