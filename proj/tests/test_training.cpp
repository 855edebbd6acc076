#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "opcap/checkpoint.hpp"
#include "opcap/config.hpp"
#include "opcap/training.hpp"
#include "opcap/util.hpp"
#include "opcap/world.hpp"

using namespace opcap;
namespace fs = std::filesystem;

namespace {

AttentionMap constant_map(double v, int n) { return {RowVector::Constant(n, v), 1, n}; }

LossConfig lambdas(double l1, double ent) {
  LossConfig c;
  c.lambda_l1 = l1;
  c.lambda_ent = ent;
  return c;
}

// A small dataset rendered at 16x16 so that training takes well under a second per epoch.
const fs::path& tiny_dataset() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "opcap_training_data";
    fs::remove_all(d);
    world::GeneratorConfig g;
    g.count = 40;
    g.resolution = 16;
    g.seed = 3;
    g.split = {0.6, 0.2, 0.2};
    world::generate_dataset(g, d);
    return d;
  }();
  return dir;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c = default_config();
  c.model.image_size = 16;
  c.model.conv = {{8, 2, 2}};
  c.model.spatial_hidden = 4;
  c.model.embed_dim = 8;
  c.model.hidden_dim = 16;
  c.model.attention_dim = 8;
  c.model.max_caption_len = 12;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  return c;
}

}  // namespace

TEST_CASE("regularizers") {
  auto [l1, ent] = regularizers(constant_map(0.0, 4), constant_map(0.0, 4), {{{1.0, 0.0, 0.0}}});
  CHECK(l1 == 0.0);
  CHECK(ent == 0.0);
  std::tie(l1, ent) =
      regularizers(constant_map(0.25, 4), constant_map(0.75, 4), {{{1.0 / 3, 1.0 / 3, 1.0 / 3}}, {{1.0 / 3, 1.0 / 3, 1.0 / 3}}});
  CHECK(l1 == doctest::Approx(0.5));
  CHECK(ent == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("baseline and combined loss arithmetic") {
  CHECK(baseline_loss(1.7, 0.3, 0.4, lambdas(0.0, 0.0)) == 1.7);
  CHECK(baseline_loss(1.0, 0.5, 1.0, lambdas(2.0, 0.1)) == doctest::Approx(1.9).epsilon(1e-15));
  CHECK_THROWS_AS(baseline_loss(1.0, 0.5, 1.0, lambdas(-1.0, 0.1)), ConfigError);
  CHECK_THROWS_AS(baseline_loss(1.0, 0.5, 1.0, lambdas(1.0, -0.1)), ConfigError);

  const LossConfig none = lambdas(0.0, 0.0);
  CHECK(combined_loss({1.0, 0, 0}, {2.0, 0, 0}, 0.9, none) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(combined_loss({1.0, 0.2, 0.3}, {2.0, 0.4, 0.5}, 0.0, lambdas(0.5, 0.1)) ==
        doctest::Approx(2.0 + 0.5 * 0.4 - 0.1 * 0.5).epsilon(1e-15));
  CHECK_THROWS_AS(combined_loss({1.0, 0, 0}, {2.0, 0, 0}, 1.5, none), ConfigError);
  CHECK_THROWS_AS(combined_loss({1.0, 0, 0}, {2.0, 0, 0}, -0.1, none), ConfigError);
}

TEST_CASE("combined_loss at alpha = 1 equals baseline_loss on random inputs") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0), lam(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const LossConfig cfg = lambdas(lam(rng), lam(rng));
    const LossTerms cap{u(rng), u(rng), u(rng)};
    const LossTerms sgr{u(rng), u(rng), u(rng)};
    CHECK(std::abs(combined_loss(cap, sgr, 1.0, cfg) - baseline_loss(cap.loss, cap.l1, cap.entropy, cfg)) <= 1e-12);
  }
}

TEST_CASE("alpha schedules") {
  LossConfig alt;
  alt.alpha_mode = AlphaMode::alternative(0.0, 1.0);
  CHECK(alpha_schedule(3, alt) == 0.0);
  CHECK(alpha_schedule(12, alt) == 1.0);
  CHECK(alpha_schedule(25, alt) == 0.0);
  LossConfig alt9;
  alt9.alpha_mode = AlphaMode::alternative(0.1, 0.9);
  CHECK(alpha_schedule(10, alt9) == 0.9);
  CHECK(alpha_schedule(0, alt9) == 0.1);
  LossConfig lin;
  lin.alpha_mode = AlphaMode::linear_int(0.9);
  LossConfig base;
  for (int e = 0; e <= 200; ++e) {
    CHECK(alpha_schedule(e, lin) == 0.9);
    CHECK(alpha_schedule(e, base) == 1.0);
    // Piecewise constant with period 2 * period_epochs, low phase first.
    CHECK(alpha_schedule(e, alt9) == alpha_schedule(e + 20, alt9));
    CHECK(alpha_schedule(e, alt9) == ((e / 10) % 2 == 0 ? 0.1 : 0.9));
  }
  LossConfig bad;
  bad.alpha_mode = AlphaMode::alternative(0.9, 0.1);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.alpha_mode = AlphaMode::alternative(0.1, 0.9, 0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.alpha_mode = AlphaMode::linear_int(1.2);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_schedule(19) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_schedule(20) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_schedule(45) == doctest::Approx(0.0001).epsilon(1e-15));
  double prev = lr_schedule(0);
  for (int e = 1; e <= 200; ++e) {
    const double lr = lr_schedule(e);
    CHECK(lr > 0.0);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("SGD with momentum and global-norm clipping") {
  Matrix w = Matrix::Constant(2, 1, 1.0);
  Matrix g(2, 1);
  g << 3.0, 4.0;
  OptimizerConfig oc;
  oc.grad_clip_norm = 0.0;
  Optimizer opt(oc);
  CHECK(opt.step({{"w", &w}}, {{"w", &g}}, 0.1) == doctest::Approx(5.0));
  CHECK(w(0, 0) == doctest::Approx(1.0 - 0.3));
  opt.step({{"w", &w}}, {{"w", &g}}, 0.1);  // v = 0.9 * 3 + 3 = 5.7
  CHECK(w(0, 0) == doctest::Approx(0.7 - 0.57));
  CHECK(opt.state().count("w.velocity") == 1);

  Matrix w2 = Matrix::Constant(2, 1, 1.0);
  OptimizerConfig clip;
  clip.momentum = 0.0;
  clip.grad_clip_norm = 1.0;
  Optimizer c(clip);
  c.step({{"w", &w2}}, {{"w", &g}}, 1.0);
  CHECK(w2(0, 0) == doctest::Approx(1.0 - 0.6));
  CHECK(w2(1, 0) == doctest::Approx(1.0 - 0.8));
}

TEST_CASE("Adam's first step moves each parameter by about lr") {
  Matrix w = Matrix::Zero(3, 1);
  Matrix g(3, 1);
  g << 0.5, -2.0, 1e-3;
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.grad_clip_norm = 0.0;
  Optimizer opt(oc);
  opt.step({{"w", &w}}, {{"w", &g}}, 0.01);
  CHECK(w(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(w(1, 0) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(w(2, 0) == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(opt.steps() == 1);
}

TEST_CASE("epoch log round-trip") {
  EpochLog r{3, 0.9, 0.001, 1.5, 2.25, 0.125, 0.5, 0.75, 1.625, 0.3};
  const auto rows = parse_epoch_log(epoch_log_header() + format_epoch_log(r));
  REQUIRE(rows.size() == 1u);
  CHECK(rows[0].epoch == 3);
  CHECK(rows[0].loss_sgr == 2.25);
  CHECK(rows[0].dev_bleu4 == doctest::Approx(0.3));
  CHECK_THROWS(parse_epoch_log("epoch\tbogus\n1\t2\n"));
}

TEST_CASE("configuration: checked-in defaults, overrides and strictness") {
  CHECK(default_config() == ExperimentConfig{});
  CHECK(config_from_json(nlohmann::json::parse(config_to_json(tiny_config()).dump())) == tiny_config());

  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "loss.alpha_mode=linear_int");
  apply_override(doc, "loss.alpha=0.9");
  apply_override(doc, "train.epochs=3");
  const ExperimentConfig c = config_from_json(doc);
  CHECK(c.loss.alpha_mode.kind == AlphaKind::linear_int);
  CHECK(c.loss.alpha_mode.alpha == 0.9);
  CHECK(c.train.epochs == 3);

  CHECK_THROWS_AS(apply_override(doc, "loss.alpha_typo=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "train.epochs=\"many\""), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "train=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"model":{"bogus":1}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"loss":{"lambda_l1":-1}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"loss":{"sg_mode":"some"}})")), ConfigError);
}

TEST_CASE("train: log rows, checkpoints and reproducible dev captions") {
  const fs::path out = fs::temp_directory_path() / "opcap_train_run";
  fs::remove_all(out);
  ExperimentConfig cfg = tiny_config();
  cfg.train.epochs = 1;
  const TrainResult r = train(tiny_dataset(), cfg, out);
  REQUIRE(r.log.size() == 1u);
  CHECK(r.log[0].loss_sgr == 0.0);
  CHECK(r.log[0].alpha == 1.0);
  for (const char* f : {"train_log.tsv", "config.json", "vocab.txt", "checkpoints/epoch_000.ckpt",
                        "checkpoints/best.ckpt", "checkpoints/last.ckpt"}) {
    CHECK(fs::exists(out / f));
  }
  CHECK(parse_epoch_log(read_text_file(out / "train_log.tsv")).size() == 1u);

  const TrainState loaded = load_checkpoint(out / "checkpoints" / "last.ckpt");
  CHECK(loaded.epoch == 1);
  CHECK(loaded.step == r.state.step);
  CHECK(loaded.config == r.state.config);
  CHECK(loaded.vocab == r.state.vocab);
  const DatasetSplit dev = load_dataset(tiny_dataset(), Split::dev);
  const PreparedData data = prepare_data(dev, loaded.vocab, loaded.config.model, loaded.config.loss.sg_mode);
  CHECK(caption_all(loaded.model, data) == caption_all(r.state.model, data));
}

TEST_CASE("checkpoints round-trip bit-exactly, including optimizer state") {
  const fs::path out = fs::temp_directory_path() / "opcap_ckpt_run";
  fs::remove_all(out);
  ExperimentConfig cfg = tiny_config();
  cfg.loss.alpha_mode = AlphaMode::linear_int(0.9);
  cfg.optimizer.kind = OptimizerKind::adam;
  cfg.train.epochs = 1;
  TrainResult r = train(tiny_dataset(), cfg, out);
  TrainState loaded = load_checkpoint(out / "checkpoints" / "last.ckpt");
  auto a = r.state.model.parameters();
  auto b = loaded.model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(*a[i].value == *b[i].value);
  }
  CHECK(loaded.optimizer.state() == r.state.optimizer.state());
  CHECK(loaded.optimizer.steps() == r.state.optimizer.steps());
  CHECK(loaded.model.role_masks == r.state.model.role_masks);

  save_checkpoint(out / "again.ckpt", loaded);
  CHECK(sha256_file(out / "again.ckpt") == sha256_file(out / "checkpoints" / "last.ckpt"));

  write_text_file(out / "bad.ckpt", "OPCAPCK1 but not really");
  CHECK_THROWS_AS(load_checkpoint(out / "bad.ckpt"), LoadError);
  CHECK_THROWS_AS(load_checkpoint(out / "missing.ckpt"), LoadError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const fs::path a = fs::temp_directory_path() / "opcap_det_a";
  const fs::path b = fs::temp_directory_path() / "opcap_det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ExperimentConfig cfg = tiny_config();
  cfg.loss.alpha_mode = AlphaMode::alternative(0.1, 0.9, 1);
  train(tiny_dataset(), cfg, a);
  train(tiny_dataset(), cfg, b);
  CHECK(read_text_file(a / "train_log.tsv") == read_text_file(b / "train_log.tsv"));
  CHECK(sha256_file(a / "checkpoints" / "last.ckpt") == sha256_file(b / "checkpoints" / "last.ckpt"));

  const fs::path c = fs::temp_directory_path() / "opcap_det_c";
  fs::remove_all(c);
  cfg.train.seed = 2;
  train(tiny_dataset(), cfg, c);
  CHECK(read_text_file(a / "train_log.tsv") != read_text_file(c / "train_log.tsv"));
}

TEST_CASE("a non-finite loss aborts with the offending batch") {
  const fs::path out = fs::temp_directory_path() / "opcap_nan_run";
  fs::remove_all(out);
  ExperimentConfig cfg = tiny_config();
  cfg.optimizer.grad_clip_norm = 0.0;
  cfg.lr.base = 1e305;
  try {
    train(tiny_dataset(), cfg, out);
    FAIL("training should have aborted");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
    CHECK(msg.find("s0000") != std::string::npos);
  }
}

TEST_CASE("training from precomputed features matches the feature shape contract") {
  const fs::path out = fs::temp_directory_path() / "opcap_feat_run";
  fs::remove_all(out);
  fs::create_directories(out);
  ExperimentConfig cfg = tiny_config();
  ModelConfig encoder_only = cfg.model;
  encoder_only.vocab_size = 8;  // only the encoder of this model is used
  CaptionModel probe(encoder_only);
  probe.init(9);
  FeatureStore store;
  for (Split s : {Split::train, Split::dev}) {
    const DatasetSplit split = load_dataset(tiny_dataset(), s);
    for (const auto& rec : split.samples) {
      store[rec.image_a] = encode_image(read_png(split.resolve(rec.image_a)), probe.encoder);
      store[rec.image_b] = encode_image(read_png(split.resolve(rec.image_b)), probe.encoder);
    }
  }
  save_feature_file(out / "features.bin", store);
  cfg.train.features = (out / "features.bin").string();
  cfg.train.epochs = 1;
  const TrainResult r = train(tiny_dataset(), cfg, out / "run");
  CHECK(std::isfinite(r.log[0].loss_total));

  cfg.model.conv = {{6, 2, 2}};  // encoder output no longer matches the stored maps
  CHECK_THROWS_AS(train(tiny_dataset(), cfg, out / "run2"), ShapeError);
}
