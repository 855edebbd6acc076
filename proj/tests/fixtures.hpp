#pragma once

#include <random>
#include <string>

#include "opcap/dataset.hpp"
#include "opcap/model.hpp"

namespace opcap::testing {

/// A model small enough for finite differences (a few thousand parameters).
inline ModelConfig tiny_model_config(int vocab_size) {
  ModelConfig c;
  c.image_size = 8;
  c.conv = {{4, 4, 4}};
  c.spatial_hidden = 3;
  c.embed_dim = 4;
  c.hidden_dim = 5;
  c.attention_dim = 3;
  c.max_caption_len = 6;
  c.max_triplets = 2;
  c.vocab_size = vocab_size;
  return c;
}

/// Random images and random (but well-formed) caption and triplet sequences.
inline Batch random_batch(const ModelConfig& c, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::uniform_int_distribution<int> word(Vocabulary::kReserved, c.vocab_size - 1);
  Batch b;
  const Eigen::Index hw = static_cast<Eigen::Index>(c.image_size) * c.image_size;
  b.images_a = Matrix::NullaryExpr(3, hw * n, [&] { return pixel(rng); });
  b.images_b = Matrix::NullaryExpr(3, hw * n, [&] { return pixel(rng); });
  const int t = c.max_caption_len - 1;
  b.caption_inputs = IndexMatrix::Constant(t, n, Vocabulary::kPad);
  b.caption_targets = IndexMatrix::Constant(t, n, Vocabulary::kPad);
  const int st = 3 * c.max_triplets + 1;
  b.sg_inputs = IndexMatrix::Constant(st, n, Vocabulary::kPad);
  b.sg_targets = IndexMatrix::Constant(st, n, Vocabulary::kPad);
  for (int j = 0; j < n; ++j) {
    b.ids.push_back("r" + std::to_string(j));
    const int len = 1 + static_cast<int>(rng() % static_cast<unsigned>(t - 1));
    int prev = Vocabulary::kBos;
    for (int k = 0; k <= len; ++k) {
      const int tok = k == len ? Vocabulary::kEos : word(rng);
      b.caption_inputs(k, j) = prev;
      b.caption_targets(k, j) = tok;
      prev = tok;
    }
    const int triplets = 1 + static_cast<int>(rng() % static_cast<unsigned>(c.max_triplets));
    prev = Vocabulary::kBos;
    for (int k = 0; k <= 3 * triplets; ++k) {
      const int tok = k == 3 * triplets ? Vocabulary::kEos : word(rng);
      b.sg_inputs(k, j) = prev;
      b.sg_targets(k, j) = tok;
      prev = tok;
    }
  }
  return b;
}

}  // namespace opcap::testing
