#include "opcap/sg_head.hpp"

#include <limits>

#include "opcap/util.hpp"

namespace opcap {

namespace {

void apply_mask(Matrix& log_probs, Eigen::Index position, int max_triplets, const RoleMasks& masks) {
  if (masks.empty()) return;
  const auto& allowed = masks.for_role(TripletSequenceTarget::role(static_cast<std::size_t>(position)));
  const bool last = position == 3 * static_cast<Eigen::Index>(max_triplets);
  for (Eigen::Index v = 0; v < log_probs.rows(); ++v) {
    const bool ok = last ? v == Vocabulary::kEos : allowed[static_cast<std::size_t>(v)];
    if (!ok) log_probs.row(v).setConstant(-std::numeric_limits<double>::infinity());
  }
}

std::vector<SceneGraphTriplet> collect(const std::vector<int>& ids) {
  std::vector<SceneGraphTriplet> out;
  for (std::size_t i = 0; i + 2 < ids.size(); i += 3) {
    if (ids[i] == Vocabulary::kEos || ids[i + 1] == Vocabulary::kEos || ids[i + 2] == Vocabulary::kEos) break;
    out.push_back({ids[i], ids[i + 1], ids[i + 2]});
  }
  return out;
}

}  // namespace

void TripletSequenceTarget::validate() const {
  if (max_triplets < 1) throw ShapeError("max_triplets must be at least 1");
  if (ids.size() != length()) {
    throw ShapeError("triplet target has " + std::to_string(ids.size()) + " ids, expected " +
                     std::to_string(length()));
  }
  std::size_t eos = ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == Vocabulary::kEos) {
      eos = i;
      break;
    }
  }
  if (eos == ids.size() || eos % 3 != 0) throw ShapeError("triplet target EOS must sit at a subject position");
  for (std::size_t i = eos + 1; i < ids.size(); ++i) {
    if (ids[i] != Vocabulary::kPad) throw ShapeError("triplet target must be PAD after EOS");
  }
}

RoleMasks RoleMasks::from_triplets(const std::vector<SceneGraphTriplet>& triplets, int vocab_size) {
  const auto v = static_cast<std::size_t>(vocab_size);
  RoleMasks m{std::vector<bool>(v, false), std::vector<bool>(v, false), std::vector<bool>(v, false)};
  auto mark = [&](std::vector<bool>& mask, int id) {
    if (id < 0 || id >= vocab_size) throw ShapeError("triplet id out of range");
    mask[static_cast<std::size_t>(id)] = true;
  };
  for (const auto& t : triplets) {
    mark(m.subject, t.subject);
    mark(m.relationship, t.relationship);
    mark(m.object, t.object);
  }
  mark(m.subject, Vocabulary::kEos);
  return m;
}

RoleMasks RoleMasks::open(int vocab_size) {
  const auto v = static_cast<std::size_t>(vocab_size);
  return {std::vector<bool>(v, true), std::vector<bool>(v, true), std::vector<bool>(v, true)};
}

const std::vector<bool>& RoleMasks::for_role(TripletRole r) const {
  switch (r) {
    case TripletRole::subject: return subject;
    case TripletRole::relationship: return relationship;
    case TripletRole::object: return object;
  }
  return subject;
}

std::vector<int> shifted_inputs(const std::vector<int>& target) {
  std::vector<int> in;
  in.reserve(target.size());
  in.push_back(Vocabulary::kBos);
  for (std::size_t i = 0; i + 1 < target.size(); ++i) {
    in.push_back(target[i]);
  }
  return in;
}

std::vector<std::vector<SceneGraphTriplet>> predict_triplets_batch(const StreamBatch& streams,
                                                                   const RecurrentHead& head, const RoleMasks& masks,
                                                                   int max_triplets) {
  if (max_triplets < 1) throw ConfigError("max_triplets must be at least 1");
  const int steps = 3 * max_triplets + 1;
  const IndexMatrix ids = head.greedy(streams, steps, Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kPad,
                                      [&](int t, Matrix& lp) { apply_mask(lp, t, max_triplets, masks); });
  std::vector<std::vector<SceneGraphTriplet>> out;
  for (Eigen::Index j = 0; j < ids.cols(); ++j) {
    std::vector<int> col(ids.col(j).data(), ids.col(j).data() + ids.rows());
    out.push_back(collect(col));
  }
  return out;
}

TripletPrediction predict_triplets(const FeatureBundle& bundle, const RecurrentHead& head, const RoleMasks& masks,
                                   int max_triplets) {
  if (max_triplets < 1) throw ConfigError("max_triplets must be at least 1");
  const StreamBatch streams = streams_of(bundle);
  const auto projected = head.project(streams);
  const int d = head.config().hidden_dim;
  Matrix h = Matrix::Zero(d, 1), c = Matrix::Zero(d, 1);
  Matrix weights, context;
  TripletPrediction pred;
  std::vector<int> ids;
  int prev = Vocabulary::kBos;
  bool done = false;
  for (int t = 0; t < 3 * max_triplets + 1; ++t) {
    if (t == 0 || head.config().per_step_attention) head.attend(streams, projected, h, weights, context);
    const Matrix logits = head.step({prev}, context, h, c);
    pred.logits.push_back(logits.col(0));
    if (done) {
      prev = Vocabulary::kPad;
      continue;
    }
    Matrix lp = log_softmax_cols(logits);
    apply_mask(lp, t, max_triplets, masks);
    int best = 0;
    for (Eigen::Index v = 1; v < lp.rows(); ++v) {
      if (lp(v, 0) > lp(best, 0)) best = static_cast<int>(v);
    }
    ids.push_back(best);
    if (best == Vocabulary::kEos) {
      done = true;
      prev = Vocabulary::kPad;
    } else {
      prev = best;
    }
  }
  pred.triplets = collect(ids);
  return pred;
}

double sg_loss(const std::vector<Vector>& logits, const TripletSequenceTarget& target) {
  if (logits.size() != target.ids.size()) {
    throw ShapeError("sg_loss: " + std::to_string(logits.size()) + " logit vectors for " +
                     std::to_string(target.ids.size()) + " target ids");
  }
  return caption_loss(logits, target.ids, Vocabulary::kPad);
}

}  // namespace opcap
