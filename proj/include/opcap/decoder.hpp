#pragma once

#include <array>
#include <functional>
#include <random>
#include <vector>

#include "opcap/encoder.hpp"
#include "opcap/tensor.hpp"

namespace opcap {

struct HeadConfig {
  int feature_dim = 64;     // C, size of each attended feature vector
  int embed_dim = 64;
  int hidden_dim = 128;     // D
  int attention_dim = 64;   // hidden size of the stream scorer
  int vocab_size = 0;
  bool per_step_attention = true;  // false: stream weights computed once from the initial state
  bool operator==(const HeadConfig&) const = default;
};

struct DecoderState {
  Vector hidden;
  Vector cell;
  int step = 0;
};

/// Simplex weights over the streams (A, B, diff).
struct DynamicAttentionWeights {
  std::array<double, 3> w{};
};

/// The three attended feature streams for a batch, each C x N.
struct StreamBatch {
  Matrix a;
  Matrix b;
  Matrix diff;

  int size() const { return static_cast<int>(a.cols()); }
  const Matrix& operator[](int i) const { return i == 0 ? a : (i == 1 ? b : diff); }
};

StreamBatch streams_of(const FeatureBundle& bundle);

/// Recurrent decoder with dynamic attention over the three feature streams.
///
/// At every step a scorer rates each stream against the previous hidden state
/// (v . tanh(W_l l_i + W_q h + b)); softmax over the three scores mixes the
/// streams into a context vector that is fed to an LSTM cell together with the
/// previous token's embedding. Used for both the caption decoder and the
/// scene-graph head, with separate parameters.
class RecurrentHead {
 public:
  struct Loss {
    double xent = 0.0;     // mean over non-PAD targets
    double entropy = 0.0;  // mean stream-attention entropy over the same positions
    int tokens = 0;
  };

  struct StepCache {
    Matrix h_prev, c_prev;
    std::array<Matrix, 3> squashed;  // tanh(W_l l_i + W_q h + b), K x N
    Matrix weights;                  // 3 x N
    Matrix context;                  // C x N
    Matrix input;                    // (E + C) x N
    Matrix in_gate, forget_gate, cell_gate, out_gate, cell, tanh_cell, hidden;
    Matrix log_probs;                // V x N
  };

  struct Cache {
    StreamBatch streams;
    std::array<Matrix, 3> projected;  // W_l l_i
    IndexMatrix inputs, targets;
    std::vector<StepCache> steps;
    int tokens = 0;
  };

  RecurrentHead() = default;
  explicit RecurrentHead(const HeadConfig& config);

  void init(std::mt19937_64& rng);
  const HeadConfig& config() const { return config_; }

  /// inputs/targets are T x N; PAD targets are ignored.
  Loss teacher_forced(const StreamBatch& streams, const IndexMatrix& inputs, const IndexMatrix& targets,
                      Cache* cache) const;
  /// Gradients of xent_weight * xent + entropy_weight * entropy.
  void backward(const Cache& cache, double xent_weight, double entropy_weight, StreamBatch& d_streams,
                RecurrentHead& grads) const;

  /// Stream weights (3 x N) and context (C x N) for hidden states h (D x N).
  void attend(const StreamBatch& streams, const std::array<Matrix, 3>& projected, const Matrix& h,
              Matrix& weights, Matrix& context, std::array<Matrix, 3>* squashed = nullptr) const;
  std::array<Matrix, 3> project(const StreamBatch& streams) const;
  /// One LSTM step; returns logits (V x N) and overwrites h and c.
  Matrix step(const std::vector<int>& tokens, const Matrix& context, Matrix& h, Matrix& c) const;

  /// Greedy decoding for a batch. `mask(t, logits)` may veto tokens by writing -inf.
  /// Returns steps x N ids; positions after EOS are PAD.
  IndexMatrix greedy(const StreamBatch& streams, int steps, int bos, int eos, int pad,
                     const std::function<void(int, Matrix&)>& mask = {}) const;

  std::vector<NamedParam> parameters(const std::string& prefix);

  Matrix att_feature, att_state, att_bias, att_score;
  Matrix embedding, w_input, w_hidden, bias;
  Matrix w_out, b_out;

 private:
  HeadConfig config_;
};

std::pair<Vector, DynamicAttentionWeights> dynamic_attention(const FeatureBundle& bundle, const DecoderState& state,
                                                             const RecurrentHead& head);
DecoderState initial_state(const RecurrentHead& head);
/// Logits over the vocabulary and the advanced state.
std::pair<Vector, DecoderState> decode_step(const Vector& context, int prev_token, const DecoderState& state,
                                            const RecurrentHead& head);

struct SearchStrategy {
  enum class Kind { greedy, beam } kind = Kind::greedy;
  int beam_width = 1;

  static SearchStrategy greedy() { return {}; }
  static SearchStrategy beam(int k) { return {Kind::beam, k}; }
};

/// Token ids after BOS, ending with EOS when one is produced within max_len.
std::vector<int> generate(const FeatureBundle& bundle, const RecurrentHead& head, SearchStrategy strategy,
                          int max_len);
std::vector<int> generate(const StreamBatch& single, const RecurrentHead& head, SearchStrategy strategy, int max_len);

/// Mean over non-PAD positions of -log softmax(logits)[reference].
double caption_loss(const std::vector<Vector>& logits, const std::vector<int>& reference, int pad_id);

/// Shannon entropy of a probability vector.
double entropy(const Eigen::Ref<const Vector>& p);

}  // namespace opcap
