#pragma once

#include <vector>

#include "opcap/dataset.hpp"
#include "opcap/decoder.hpp"

namespace opcap {

enum class TripletRole { subject, relationship, object };

/// Flat [s1,r1,o1, s2,r2,o2, ..., EOS, PAD...] of length 3*max_triplets+1.
struct TripletSequenceTarget {
  std::vector<int> ids;
  int max_triplets = 0;

  static TripletRole role(std::size_t position) { return static_cast<TripletRole>(position % 3); }
  std::size_t length() const { return static_cast<std::size_t>(3 * max_triplets + 1); }
  /// Throws ShapeError when the length or EOS placement is inconsistent.
  void validate() const;
};

/// Which ids may be decoded in each role. Subject positions also admit EOS.
struct RoleMasks {
  std::vector<bool> subject;
  std::vector<bool> relationship;
  std::vector<bool> object;

  static RoleMasks from_triplets(const std::vector<SceneGraphTriplet>& triplets, int vocab_size);
  /// Every id is allowed in every role.
  static RoleMasks open(int vocab_size);

  const std::vector<bool>& for_role(TripletRole r) const;
  bool empty() const { return subject.empty(); }
  bool operator==(const RoleMasks&) const = default;
};

/// Teacher-forcing inputs for a flat target: BOS followed by the target shifted right.
std::vector<int> shifted_inputs(const std::vector<int>& target);

struct TripletPrediction {
  std::vector<Vector> logits;  // 3*max_triplets+1 distributions
  std::vector<SceneGraphTriplet> triplets;
};

/// Greedy, role-masked decoding of the auxiliary head. The head sees only the
/// attended streams of the bundle, never caption tokens.
TripletPrediction predict_triplets(const FeatureBundle& bundle, const RecurrentHead& head, const RoleMasks& masks,
                                   int max_triplets);
/// Batched variant used for evaluation; returns one triplet list per column of `streams`.
std::vector<std::vector<SceneGraphTriplet>> predict_triplets_batch(const StreamBatch& streams,
                                                                   const RecurrentHead& head, const RoleMasks& masks,
                                                                   int max_triplets);

double sg_loss(const std::vector<Vector>& logits, const TripletSequenceTarget& target);

}  // namespace opcap
