#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "opcap/model.hpp"
#include "opcap/sg_head.hpp"
#include "opcap/training.hpp"
#include "opcap/util.hpp"
#include "opcap/world.hpp"

using namespace opcap;

namespace {

FeatureBundle random_bundle(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureBundle b;
  b.l_a = Vector::NullaryExpr(dim, [&] { return g(rng); });
  b.l_b = Vector::NullaryExpr(dim, [&] { return g(rng); });
  b.l_diff = Vector::NullaryExpr(dim, [&] { return g(rng); });
  return b;
}

RecurrentHead random_head(int vocab, std::uint64_t seed) {
  RecurrentHead h(HeadConfig{4, 3, 6, 3, vocab, true});
  std::mt19937_64 rng(seed);
  h.init(rng);
  init_uniform(h.b_out, 2.0, rng);
  return h;
}

}  // namespace

TEST_CASE("target layout: length, roles and validation") {
  TripletSequenceTarget t{{4, 5, 6, Vocabulary::kEos, 0, 0, 0}, 2};
  CHECK(t.length() == 7u);
  CHECK(TripletSequenceTarget::role(0) == TripletRole::subject);
  CHECK(TripletSequenceTarget::role(4) == TripletRole::relationship);
  CHECK(TripletSequenceTarget::role(5) == TripletRole::object);
  CHECK_NOTHROW(t.validate());
  CHECK_THROWS_AS((TripletSequenceTarget{{4, 5, 6, 2, 0, 0}, 2}.validate()), ShapeError);
  CHECK_THROWS_AS((TripletSequenceTarget{{4, 2, 0, 0, 0, 0, 0}, 2}.validate()), ShapeError);
  CHECK_THROWS_AS((TripletSequenceTarget{{4, 5, 6, 2, 7, 0, 0}, 2}.validate()), ShapeError);
  CHECK(shifted_inputs(t.ids) == std::vector<int>{Vocabulary::kBos, 4, 5, 6, Vocabulary::kEos, 0, 0});
}

TEST_CASE("role masks admit EOS only at subject positions") {
  const RoleMasks m = RoleMasks::from_triplets({{4, 5, 6}, {7, 5, 4}}, 9);
  CHECK(m.subject[Vocabulary::kEos]);
  CHECK_FALSE(m.relationship[Vocabulary::kEos]);
  CHECK(m.subject[4]);
  CHECK(m.subject[7]);
  CHECK_FALSE(m.subject[5]);
  CHECK(m.object[4]);
  CHECK_THROWS_AS(RoleMasks::from_triplets({{4, 5, 9}}, 9), ShapeError);
}

TEST_CASE("EOS forced at the first position yields zero triplets") {
  RecurrentHead h = random_head(9, 1);
  h.w_out.setZero();
  h.b_out.setZero();
  h.b_out(Vocabulary::kEos, 0) = 10.0;
  const auto pred = predict_triplets(random_bundle(4, 2), h, RoleMasks::open(9), 3);
  CHECK(pred.triplets.empty());
  CHECK(pred.logits.size() == 10u);
}

TEST_CASE("hand-built one-triplet head decodes exactly (person, holding, cup)") {
  // ids: 4 person, 5 holding, 6 cup. Only the embedding of "cup" reaches the
  // cell, so the hidden state is zero until the object has been emitted.
  const int v = 7;
  RecurrentHead h(HeadConfig{2, 1, 1, 1, v, true});
  h.att_feature.setZero();
  h.att_state.setZero();
  h.att_bias.setZero();
  h.att_score.setZero();
  h.embedding.setZero();
  h.embedding(0, 6) = 10.0;
  h.w_input.setZero();
  h.w_input(2, 0) = 1.0;  // cell candidate reads the embedding
  h.w_hidden.setZero();
  h.bias << 20.0, -20.0, 0.0, 20.0;
  h.w_out.setZero();
  h.w_out(Vocabulary::kEos, 0) = 10.0;
  h.b_out.setZero();
  h.b_out(4, 0) = 1.0;

  const RoleMasks masks = RoleMasks::from_triplets({{4, 5, 6}}, v);
  const auto pred = predict_triplets(random_bundle(2, 3), h, masks, 2);
  REQUIRE(pred.triplets.size() == 1u);
  CHECK(pred.triplets[0] == SceneGraphTriplet{4, 5, 6});

  // Position 3 follows the "cup" input: c = i*tanh(10), h = o*tanh(c).
  const double sig = 1.0 / (1.0 + std::exp(-20.0));
  const double c = sig * std::tanh(10.0);
  const double hid = sig * std::tanh(c);
  CHECK(pred.logits[3][Vocabulary::kEos] == doctest::Approx(10.0 * hid).epsilon(1e-12));
  CHECK(pred.logits[3][4] == doctest::Approx(1.0));
  CHECK(pred.logits[0][Vocabulary::kEos] == doctest::Approx(0.0));
}

TEST_CASE("decoded ids always respect the role masks") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int v = 12;
    std::vector<SceneGraphTriplet> allowed;
    for (int k = 0; k < 3; ++k) {
      allowed.push_back({4 + static_cast<int>(rng() % 8), 4 + static_cast<int>(rng() % 8), 4 + static_cast<int>(rng() % 8)});
    }
    const RoleMasks masks = RoleMasks::from_triplets(allowed, v);
    const RecurrentHead h = random_head(v, rng());
    const auto pred = predict_triplets(random_bundle(4, rng()), h, masks, 4);
    CHECK(pred.triplets.size() <= 4u);
    for (const auto& t : pred.triplets) {
      CHECK(masks.subject[static_cast<std::size_t>(t.subject)]);
      CHECK(masks.relationship[static_cast<std::size_t>(t.relationship)]);
      CHECK(masks.object[static_cast<std::size_t>(t.object)]);
    }
    // The batched decoder agrees with the single-sample one.
    const auto batched = predict_triplets_batch(streams_of(random_bundle(4, 0)), h, masks, 4);
    const auto single = predict_triplets(random_bundle(4, 0), h, masks, 4);
    CHECK(batched[0] == single.triplets);
  }
}

TEST_CASE("sg_loss: perfect, uniform and naive cases") {
  const TripletSequenceTarget t{{4, 5, 6, Vocabulary::kEos, 0, 0, 0}, 2};
  std::vector<Vector> perfect;
  for (int id : t.ids) {
    Vector l = Vector::Zero(8);
    l[id] = 80.0;
    perfect.push_back(l);
  }
  CHECK(sg_loss(perfect, t) < 1e-30);
  CHECK(sg_loss(std::vector<Vector>(7, Vector::Zero(8)), t) == doctest::Approx(std::log(8.0)).epsilon(1e-14));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.5);
  std::vector<Vector> logits;
  for (int i = 0; i < 7; ++i) logits.push_back(Vector::NullaryExpr(8, [&] { return g(rng); }));
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    double z = 0.0;
    for (int k = 0; k < 8; ++k) z += std::exp(logits[static_cast<std::size_t>(i)][k]);
    sum += std::log(z) - logits[static_cast<std::size_t>(i)][t.ids[static_cast<std::size_t>(i)]];
  }
  CHECK(sg_loss(logits, t) == doctest::Approx(sum / 4.0).epsilon(1e-12));
  logits.pop_back();
  CHECK_THROWS_AS(sg_loss(logits, t), ShapeError);
}

TEST_CASE("sg_loss is finite and positive on generated samples at initialization") {
  world::GeneratorConfig gc;
  std::vector<StatePairSample> samples;
  std::vector<world::GeneratedSample> gen;
  for (std::size_t i = 0; i < 40; ++i) {
    gen.push_back(world::generate_sample(gc, i));
    samples.push_back(gen.back().record);
  }
  const Vocabulary vocab = build_vocabulary(samples, 1);
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  CaptionModel model(mc);
  model.init(3);
  for (TargetMode mode : {TargetMode::all, TargetMode::diff}) {
    for (const auto& g : gen) {
      const TripletSequenceTarget target{scene_graph_targets(g.record, mode, vocab, mc.max_triplets), mc.max_triplets};
      target.validate();
      const auto bundle = model.bundle(world::render(g.before, 64), world::render(g.after, 64));
      const double loss = sg_loss(predict_triplets(bundle, model.scene_graph, RoleMasks::open(vocab.size()),
                                                   mc.max_triplets).logits,
                                  target);
      CHECK(std::isfinite(loss));
      CHECK(loss > 0.0);
    }
  }
}

TEST_CASE("the auxiliary loss ignores caption supervision") {
  const ModelConfig cfg = testing::tiny_model_config(10);
  CaptionModel model(cfg);
  model.init(4);
  Batch a = testing::random_batch(cfg, 3, 5);
  Batch b = a;
  b.caption_inputs.setConstant(Vocabulary::kBos);
  b.caption_targets.setConstant(7);
  const LossWeights w{0.5, 0.0, 0.0, true};
  CHECK(model.forward_backward(a, w, nullptr).scene_graph == model.forward_backward(b, w, nullptr).scene_graph);
  CHECK(model.forward_backward(a, w, nullptr).caption != model.forward_backward(b, w, nullptr).caption);
}

TEST_CASE("single-batch overfit drives triplet exact match to at least 95%") {
  ModelConfig cfg = testing::tiny_model_config(14);
  cfg.embed_dim = 16;
  cfg.hidden_dim = 32;
  cfg.attention_dim = 16;
  cfg.max_triplets = 3;
  const int n = 16;
  CaptionModel model(cfg);
  model.init(6);
  const Batch batch = testing::random_batch(cfg, n, 7);

  std::vector<std::vector<SceneGraphTriplet>> expect(n);
  std::vector<SceneGraphTriplet> all;
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k + 2 < batch.sg_targets.rows() && batch.sg_targets(k, j) != Vocabulary::kEos; k += 3) {
      expect[static_cast<std::size_t>(j)].push_back(
          {batch.sg_targets(k, j), batch.sg_targets(k + 1, j), batch.sg_targets(k + 2, j)});
      all.push_back(expect[static_cast<std::size_t>(j)].back());
    }
  }
  const RoleMasks masks = RoleMasks::from_triplets(all, cfg.vocab_size);

  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  Optimizer opt(oc);
  CaptionModel grads = model.zeros_like();
  const LossWeights w{0.0, 0.0, 0.0, true};
  for (int step = 0; step < 500; ++step) {
    grads.set_zero();
    model.forward_backward(batch, w, &grads);
    opt.step(model.parameters(), grads.parameters(), 0.01);
  }
  const auto pred = predict_triplets_batch(model.streams(batch).l, model.scene_graph, masks, cfg.max_triplets);
  int hits = 0;
  for (int j = 0; j < n; ++j) hits += pred[static_cast<std::size_t>(j)] == expect[static_cast<std::size_t>(j)];
  MESSAGE("triplet exact match " << hits << "/" << n);
  CHECK(static_cast<double>(hits) / n >= 0.95);
}
