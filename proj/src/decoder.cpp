#include "opcap/decoder.hpp"

#include <cmath>
#include <limits>

#include "opcap/dataset.hpp"
#include "opcap/search.hpp"
#include "opcap/util.hpp"

namespace opcap {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix tanh_m(const Matrix& m) { return m.array().tanh().matrix(); }

Matrix softmax_cols(const Matrix& s) { return log_softmax_cols(s).array().exp().matrix(); }

// Smallest index wins ties.
int argmax_col(const Matrix& m, Eigen::Index col) {
  int best = 0;
  for (Eigen::Index v = 1; v < m.rows(); ++v) {
    if (m(v, col) > m(best, col)) best = static_cast<int>(v);
  }
  return best;
}

StreamBatch replicate(const StreamBatch& single, int n) {
  return {single.a.replicate(1, n), single.b.replicate(1, n), single.diff.replicate(1, n)};
}

}  // namespace

StreamBatch streams_of(const FeatureBundle& bundle) {
  if (bundle.l_a.size() != bundle.l_b.size() || bundle.l_a.size() != bundle.l_diff.size()) {
    throw ShapeError("feature bundle streams differ in length");
  }
  return {bundle.l_a, bundle.l_b, bundle.l_diff};
}

double entropy(const Eigen::Ref<const Vector>& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

// ---------------------------------------------------------------------------

RecurrentHead::RecurrentHead(const HeadConfig& config) : config_(config) {
  if (config.feature_dim < 1 || config.embed_dim < 1 || config.hidden_dim < 1 || config.attention_dim < 1 ||
      config.vocab_size < 1) {
    throw ConfigError("recurrent head dimensions must be positive");
  }
  const int c = config.feature_dim, e = config.embed_dim, d = config.hidden_dim, k = config.attention_dim;
  const int v = config.vocab_size;
  att_feature = Matrix::Zero(k, c);
  att_state = Matrix::Zero(k, d);
  att_bias = Matrix::Zero(k, 1);
  att_score = Matrix::Zero(k, 1);
  embedding = Matrix::Zero(e, v);
  w_input = Matrix::Zero(4 * d, e + c);
  w_hidden = Matrix::Zero(4 * d, d);
  bias = Matrix::Zero(4 * d, 1);
  w_out = Matrix::Zero(v, d);
  b_out = Matrix::Zero(v, 1);
}

void RecurrentHead::init(std::mt19937_64& rng) {
  const double d = config_.hidden_dim;
  init_uniform(att_feature, 1.0 / std::sqrt(static_cast<double>(config_.feature_dim)), rng);
  init_uniform(att_state, 1.0 / std::sqrt(d), rng);
  att_bias.setZero();
  init_uniform(att_score, 1.0 / std::sqrt(static_cast<double>(config_.attention_dim)), rng);
  init_uniform(embedding, 0.1, rng);
  init_uniform(w_input, 1.0 / std::sqrt(static_cast<double>(w_input.cols())), rng);
  init_uniform(w_hidden, 1.0 / std::sqrt(d), rng);
  bias.setZero();
  bias.middleRows(config_.hidden_dim, config_.hidden_dim).setOnes();
  init_uniform(w_out, 1.0 / std::sqrt(d), rng);
  b_out.setZero();
}

std::array<Matrix, 3> RecurrentHead::project(const StreamBatch& streams) const {
  for (int i = 0; i < 3; ++i) {
    if (streams[i].rows() != config_.feature_dim || streams[i].cols() != streams.a.cols()) {
      throw ShapeError("stream " + std::to_string(i) + " is " + std::to_string(streams[i].rows()) + "x" +
                       std::to_string(streams[i].cols()) + ", head expects " + std::to_string(config_.feature_dim) +
                       " rows");
    }
  }
  return {att_feature * streams.a, att_feature * streams.b, att_feature * streams.diff};
}

void RecurrentHead::attend(const StreamBatch& streams, const std::array<Matrix, 3>& projected, const Matrix& h,
                           Matrix& weights, Matrix& context, std::array<Matrix, 3>* squashed) const {
  Matrix q = att_state * h;
  q.colwise() += att_bias.col(0);
  Matrix scores(3, h.cols());
  for (int i = 0; i < 3; ++i) {
    Matrix t = tanh_m(projected[i] + q);
    scores.row(i) = att_score.transpose() * t;
    if (squashed) (*squashed)[i] = std::move(t);
  }
  weights = softmax_cols(scores);
  context = streams.a * weights.row(0).asDiagonal();
  context.noalias() += streams.b * weights.row(1).asDiagonal();
  context.noalias() += streams.diff * weights.row(2).asDiagonal();
}

Matrix RecurrentHead::step(const std::vector<int>& tokens, const Matrix& context, Matrix& h, Matrix& c) const {
  const int d = config_.hidden_dim;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  Matrix x(config_.embed_dim + config_.feature_dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int tok = tokens[static_cast<std::size_t>(j)];
    if (tok < 0 || tok >= config_.vocab_size) throw ShapeError("token id " + std::to_string(tok) + " out of range");
    x.col(j).head(config_.embed_dim) = embedding.col(tok);
  }
  x.bottomRows(config_.feature_dim) = context;
  Matrix g = w_input * x;
  g.noalias() += w_hidden * h;
  g.colwise() += bias.col(0);
  const Matrix in_gate = sigmoid(Matrix(g.topRows(d)));
  const Matrix forget_gate = sigmoid(Matrix(g.middleRows(d, d)));
  const Matrix cell_gate = tanh_m(g.middleRows(2 * d, d));
  const Matrix out_gate = sigmoid(Matrix(g.bottomRows(d)));
  c = forget_gate.cwiseProduct(c) + in_gate.cwiseProduct(cell_gate);
  h = out_gate.cwiseProduct(tanh_m(c));
  Matrix logits = w_out * h;
  logits.colwise() += b_out.col(0);
  return logits;
}

RecurrentHead::Loss RecurrentHead::teacher_forced(const StreamBatch& streams, const IndexMatrix& inputs,
                                                  const IndexMatrix& targets, Cache* cache) const {
  if (inputs.rows() != targets.rows() || inputs.cols() != targets.cols() || inputs.cols() != streams.size()) {
    throw ShapeError("teacher forcing: inputs, targets and streams disagree in shape");
  }
  const int d = config_.hidden_dim;
  const Eigen::Index n = inputs.cols();
  const auto projected = project(streams);
  Matrix h = Matrix::Zero(d, n), c = Matrix::Zero(d, n);
  Matrix weights, context;
  std::array<Matrix, 3> squashed;

  Loss loss;
  std::vector<StepCache> steps;
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
    StepCache sc;
    sc.h_prev = h;
    sc.c_prev = c;
    if (t == 0 || config_.per_step_attention) attend(streams, projected, h, weights, context, &squashed);

    const int e = config_.embed_dim;
    sc.input.resize(e + config_.feature_dim, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const int tok = inputs(t, j);
      if (tok < 0 || tok >= config_.vocab_size) throw ShapeError("token id " + std::to_string(tok) + " out of range");
      sc.input.col(j).head(e) = embedding.col(tok);
    }
    sc.input.bottomRows(config_.feature_dim) = context;
    Matrix g = w_input * sc.input;
    g.noalias() += w_hidden * h;
    g.colwise() += bias.col(0);
    sc.in_gate = sigmoid(Matrix(g.topRows(d)));
    sc.forget_gate = sigmoid(Matrix(g.middleRows(d, d)));
    sc.cell_gate = tanh_m(g.middleRows(2 * d, d));
    sc.out_gate = sigmoid(Matrix(g.bottomRows(d)));
    c = sc.forget_gate.cwiseProduct(c) + sc.in_gate.cwiseProduct(sc.cell_gate);
    sc.tanh_cell = tanh_m(c);
    h = sc.out_gate.cwiseProduct(sc.tanh_cell);
    Matrix logits = w_out * h;
    logits.colwise() += b_out.col(0);
    sc.log_probs = log_softmax_cols(logits);

    for (Eigen::Index j = 0; j < n; ++j) {
      const int target = targets(t, j);
      if (target == Vocabulary::kPad) continue;
      if (target < 0 || target >= config_.vocab_size) {
        throw ShapeError("target id " + std::to_string(target) + " out of range");
      }
      loss.xent -= sc.log_probs(target, j);
      loss.entropy += entropy(weights.col(j));
      ++loss.tokens;
    }
    if (cache) {
      sc.cell = c;
      sc.hidden = h;
      sc.weights = weights;
      sc.context = context;
      if (t == 0 || config_.per_step_attention) sc.squashed = squashed;
      steps.push_back(std::move(sc));
    }
  }
  if (loss.tokens > 0) {
    loss.xent /= loss.tokens;
    loss.entropy /= loss.tokens;
  }
  if (cache) {
    cache->streams = streams;
    cache->projected = projected;
    cache->inputs = inputs;
    cache->targets = targets;
    cache->steps = std::move(steps);
    cache->tokens = loss.tokens;
  }
  return loss;
}

void RecurrentHead::backward(const Cache& cache, double xent_weight, double entropy_weight, StreamBatch& d_streams,
                             RecurrentHead& grads) const {
  if (cache.tokens == 0) return;
  const int d = config_.hidden_dim;
  const int e = config_.embed_dim;
  const Eigen::Index n = cache.inputs.cols();
  const double xent_scale = xent_weight / cache.tokens;
  const double ent_scale = entropy_weight / cache.tokens;
  const StreamBatch& streams = cache.streams;

  Matrix dh_next = Matrix::Zero(d, n), dc_next = Matrix::Zero(d, n);
  Matrix dw_once = Matrix::Zero(3, n);

  // Attention backward for one step given dL/dweights (3 x N).
  auto attention_backward = [&](const StepCache& sc, const Matrix& dw, Matrix& dh_prev) {
    Matrix ds(3, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dot = sc.weights.col(j).dot(dw.col(j));
      ds.col(j) = sc.weights.col(j).cwiseProduct((dw.col(j).array() - dot).matrix());
    }
    Matrix dq = Matrix::Zero(att_state.rows(), n);
    for (int i = 0; i < 3; ++i) {
      const Matrix& t = sc.squashed[i];
      grads.att_score.noalias() += t * ds.row(i).transpose();
      Matrix dz = (att_score * ds.row(i)).cwiseProduct((1.0 - t.array().square()).matrix());
      grads.att_feature.noalias() += dz * streams[i].transpose();
      Matrix& ds_i = i == 0 ? d_streams.a : (i == 1 ? d_streams.b : d_streams.diff);
      ds_i.noalias() += att_feature.transpose() * dz;
      dq += dz;
    }
    grads.att_state.noalias() += dq * sc.h_prev.transpose();
    grads.att_bias += dq.rowwise().sum();
    dh_prev.noalias() += att_state.transpose() * dq;
  };

  for (std::size_t t = cache.steps.size(); t-- > 0;) {
    const StepCache& sc = cache.steps[t];
    const auto row = static_cast<Eigen::Index>(t);

    Matrix dlogits = Matrix::Zero(config_.vocab_size, n);
    Matrix dw = Matrix::Zero(3, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const int target = cache.targets(row, j);
      if (target == Vocabulary::kPad) continue;
      dlogits.col(j) = sc.log_probs.col(j).array().exp() * xent_scale;
      dlogits(target, j) -= xent_scale;
      if (ent_scale != 0.0) {
        for (int i = 0; i < 3; ++i) {
          const double w = std::max(sc.weights(i, j), 1e-300);
          dw(i, j) = -(std::log(w) + 1.0) * ent_scale;
        }
      }
    }
    grads.w_out.noalias() += dlogits * sc.hidden.transpose();
    grads.b_out += dlogits.rowwise().sum();
    Matrix dh = w_out.transpose() * dlogits + dh_next;

    const Matrix d_out = dh.cwiseProduct(sc.tanh_cell);
    Matrix dc = dh.cwiseProduct(sc.out_gate).cwiseProduct((1.0 - sc.tanh_cell.array().square()).matrix()) + dc_next;
    Matrix dg(4 * d, n);
    dg.topRows(d) = dc.cwiseProduct(sc.cell_gate).cwiseProduct(
        sc.in_gate.cwiseProduct((1.0 - sc.in_gate.array()).matrix()));
    dg.middleRows(d, d) = dc.cwiseProduct(sc.c_prev).cwiseProduct(
        sc.forget_gate.cwiseProduct((1.0 - sc.forget_gate.array()).matrix()));
    dg.middleRows(2 * d, d) =
        dc.cwiseProduct(sc.in_gate).cwiseProduct((1.0 - sc.cell_gate.array().square()).matrix());
    dg.bottomRows(d) = d_out.cwiseProduct(sc.out_gate.cwiseProduct((1.0 - sc.out_gate.array()).matrix()));
    dc_next = dc.cwiseProduct(sc.forget_gate);

    grads.w_input.noalias() += dg * sc.input.transpose();
    grads.w_hidden.noalias() += dg * sc.h_prev.transpose();
    grads.bias += dg.rowwise().sum();
    const Matrix dx = w_input.transpose() * dg;
    dh_next = w_hidden.transpose() * dg;

    for (Eigen::Index j = 0; j < n; ++j) grads.embedding.col(cache.inputs(row, j)) += dx.col(j).head(e);
    const Matrix dctx = dx.bottomRows(config_.feature_dim);
    d_streams.a.noalias() += dctx * sc.weights.row(0).asDiagonal();
    d_streams.b.noalias() += dctx * sc.weights.row(1).asDiagonal();
    d_streams.diff.noalias() += dctx * sc.weights.row(2).asDiagonal();
    dw.row(0) += (streams.a.cwiseProduct(dctx)).colwise().sum();
    dw.row(1) += (streams.b.cwiseProduct(dctx)).colwise().sum();
    dw.row(2) += (streams.diff.cwiseProduct(dctx)).colwise().sum();

    if (config_.per_step_attention) {
      attention_backward(sc, dw, dh_next);
    } else {
      dw_once += dw;
      if (t == 0) attention_backward(sc, dw_once, dh_next);
    }
  }
}

IndexMatrix RecurrentHead::greedy(const StreamBatch& streams, int steps, int bos, int eos, int pad,
                                  const std::function<void(int, Matrix&)>& mask) const {
  const Eigen::Index n = streams.size();
  const auto projected = project(streams);
  Matrix h = Matrix::Zero(config_.hidden_dim, n), c = Matrix::Zero(config_.hidden_dim, n);
  Matrix weights, context;
  IndexMatrix out = IndexMatrix::Constant(steps, n, pad);
  std::vector<int> prev(static_cast<std::size_t>(n), bos);
  std::vector<bool> done(static_cast<std::size_t>(n), false);
  for (int t = 0; t < steps; ++t) {
    if (t == 0 || config_.per_step_attention) attend(streams, projected, h, weights, context);
    Matrix log_probs = log_softmax_cols(step(prev, context, h, c));
    if (mask) mask(t, log_probs);
    bool all_done = true;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (done[js]) continue;
      const int tok = argmax_col(log_probs, j);
      out(t, j) = tok;
      prev[js] = tok;
      if (tok == eos) done[js] = true;
      all_done = all_done && done[js];
    }
    if (all_done) break;
  }
  return out;
}

std::vector<NamedParam> RecurrentHead::parameters(const std::string& prefix) {
  return {{prefix + "att_feature", &att_feature}, {prefix + "att_state", &att_state},
          {prefix + "att_bias", &att_bias},       {prefix + "att_score", &att_score},
          {prefix + "embedding", &embedding},     {prefix + "w_input", &w_input},
          {prefix + "w_hidden", &w_hidden},       {prefix + "bias", &bias},
          {prefix + "w_out", &w_out},             {prefix + "b_out", &b_out}};
}

// ---------------------------------------------------------------------------

std::pair<Vector, DynamicAttentionWeights> dynamic_attention(const FeatureBundle& bundle, const DecoderState& state,
                                                             const RecurrentHead& head) {
  if (state.hidden.size() != head.config().hidden_dim) throw ShapeError("decoder state has the wrong hidden size");
  const StreamBatch streams = streams_of(bundle);
  Matrix weights, context;
  head.attend(streams, head.project(streams), state.hidden, weights, context);
  DynamicAttentionWeights w;
  for (int i = 0; i < 3; ++i) w.w[static_cast<std::size_t>(i)] = weights(i, 0);
  return {context.col(0), w};
}

DecoderState initial_state(const RecurrentHead& head) {
  const int d = head.config().hidden_dim;
  return {Vector::Zero(d), Vector::Zero(d), 0};
}

std::pair<Vector, DecoderState> decode_step(const Vector& context, int prev_token, const DecoderState& state,
                                            const RecurrentHead& head) {
  if (context.size() != head.config().feature_dim) throw ShapeError("context has the wrong size");
  if (state.hidden.size() != head.config().hidden_dim || state.cell.size() != head.config().hidden_dim) {
    throw ShapeError("decoder state has the wrong hidden size");
  }
  Matrix h = state.hidden, c = state.cell;
  Matrix logits = head.step({prev_token}, context, h, c);
  return {logits.col(0), DecoderState{h.col(0), c.col(0), state.step + 1}};
}

std::vector<int> generate(const StreamBatch& single, const RecurrentHead& head, SearchStrategy strategy,
                          int max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (single.size() != 1) throw ShapeError("generate expects a single sample");
  if (strategy.kind == SearchStrategy::Kind::greedy) {
    const IndexMatrix ids = head.greedy(single, max_len, Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kPad);
    std::vector<int> out;
    for (int t = 0; t < max_len; ++t) {
      out.push_back(ids(t, 0));
      if (ids(t, 0) == Vocabulary::kEos) break;
    }
    return out;
  }

  struct State {
    Vector h, c;
    Vector weights, context;  // cached when attention is computed once
  };
  const auto projected = head.project(single);
  const int d = head.config().hidden_dim;
  const bool per_step = head.config().per_step_attention;
  auto step = [&](std::vector<State>& states, const std::vector<int>& last) {
    const auto n = static_cast<Eigen::Index>(states.size());
    Matrix h(d, n), c(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      h.col(j) = states[static_cast<std::size_t>(j)].h;
      c.col(j) = states[static_cast<std::size_t>(j)].c;
    }
    Matrix context;
    if (per_step || states.front().context.size() == 0) {
      const StreamBatch rep = replicate(single, static_cast<int>(n));
      std::array<Matrix, 3> proj{projected[0].replicate(1, n), projected[1].replicate(1, n),
                                 projected[2].replicate(1, n)};
      Matrix weights;
      head.attend(rep, proj, h, weights, context);
      if (!per_step) {
        for (Eigen::Index j = 0; j < n; ++j) states[static_cast<std::size_t>(j)].context = context.col(j);
      }
    } else {
      context.resize(head.config().feature_dim, n);
      for (Eigen::Index j = 0; j < n; ++j) context.col(j) = states[static_cast<std::size_t>(j)].context;
    }
    const Matrix log_probs = log_softmax_cols(head.step(last, context, h, c));
    for (Eigen::Index j = 0; j < n; ++j) {
      states[static_cast<std::size_t>(j)].h = h.col(j);
      states[static_cast<std::size_t>(j)].c = c.col(j);
    }
    return log_probs;
  };
  State init{Vector::Zero(d), Vector::Zero(d), Vector(), Vector()};
  return beam_search(init, strategy.beam_width, max_len, Vocabulary::kBos, Vocabulary::kEos, step);
}

std::vector<int> generate(const FeatureBundle& bundle, const RecurrentHead& head, SearchStrategy strategy,
                          int max_len) {
  return generate(streams_of(bundle), head, strategy, max_len);
}

double caption_loss(const std::vector<Vector>& logits, const std::vector<int>& reference, int pad_id) {
  if (logits.size() != reference.size()) {
    throw ShapeError("caption_loss: " + std::to_string(logits.size()) + " logit vectors for " +
                     std::to_string(reference.size()) + " reference ids");
  }
  double total = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (reference[t] == pad_id) continue;
    if (reference[t] < 0 || reference[t] >= logits[t].size()) throw ShapeError("reference id out of range");
    const Matrix lp = log_softmax_cols(logits[t]);
    total -= lp(reference[t], 0);
    ++count;
  }
  return count == 0 ? 0.0 : total / count;
}

}  // namespace opcap
