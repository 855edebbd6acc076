// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and limits are
// pinned below; each criterion is also registered as its own ctest entry.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "../gradcheck.hpp"
#include "../oracles.hpp"
#include "../random_instances.hpp"
#include "opcap/checkpoint.hpp"
#include "opcap/config.hpp"
#include "opcap/evaluate.hpp"
#include "opcap/training.hpp"
#include "opcap/util.hpp"
#include "opcap/world.hpp"

#ifndef OPCAP_SOURCE_DIR
#error "OPCAP_SOURCE_DIR must point at the source tree"
#endif

using namespace opcap;
namespace fs = std::filesystem;

namespace {

constexpr double kMetricTolerance = 1e-9;
constexpr double kMetricSeconds = 10.0;
constexpr int kMetricCases = 50;

constexpr double kGradientTolerance = 1e-4;
constexpr int kGradientSamples = 100;
constexpr std::size_t kGradientMaxParams = 10000;
constexpr double kGradientSeconds = 60.0;

constexpr double kLossTolerance = 1e-12;
constexpr int kLossTuples = 1000;

constexpr int kOverfitSamples = 100;
constexpr int kOverfitMaxEpochs = 200;
constexpr double kOverfitExactMatch = 0.95;
constexpr double kOverfitSeconds = 600.0;

constexpr int kBenchmarkSamples = 5000;
constexpr std::uint64_t kBenchmarkSeeds[] = {1, 2, 3};
constexpr double kBenchmarkCiderSlack = 0.01;
constexpr double kBenchmarkSeconds = 7200.0;

constexpr int kOracleInstances = 1000;
constexpr int kProbeSamples = 32;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path source_path(const std::string& rel) { return fs::path(OPCAP_SOURCE_DIR) / rel; }

Outcome metric_oracles(const fs::path&) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(424242);
  double worst = 0.0;
  for (int c = 0; c < kMetricCases; ++c) {
    const Tokens hyp = testing::random_sentence(rng, 1, 10, 6);
    std::vector<Tokens> refs;
    for (int r = 0, n = 1 + static_cast<int>(rng() % 3); r < n; ++r) refs.push_back(testing::random_sentence(rng, 1, 10, 6));
    const auto b = bleu(hyp, refs, 4);
    for (int n = 1; n <= 4; ++n) {
      worst = std::max(worst, std::abs(b[static_cast<std::size_t>(n - 1)] - oracle::bleu_n(hyp, refs, n)));
    }
    worst = std::max(worst, std::abs(rouge_l(hyp, refs[0]) - oracle::rouge_l(hyp, refs[0], 1.2)));
    std::vector<Tokens> hyps{hyp};
    std::vector<std::vector<Tokens>> corpus{refs};
    for (int k = 0; k < 3; ++k) {
      hyps.push_back(testing::random_sentence(rng, 1, 8, 6));
      corpus.push_back({testing::random_sentence(rng, 1, 8, 6), testing::random_sentence(rng, 1, 8, 6)});
    }
    worst = std::max(worst, std::abs(cider(hyps, corpus).score - oracle::cider(hyps, corpus)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kMetricTolerance && secs < kMetricSeconds,
          std::to_string(kMetricCases) + " cases (BLEU-1..4, ROUGE-L, CIDEr), max |delta| " + fmt("%.3g", worst) +
              " (<= " + fmt("%g", kMetricTolerance) + "), " + fmt("%.2f", secs) + " s (< " +
              fmt("%g", kMetricSeconds) + " s)"};
}

Outcome gradient_check(const fs::path&) {
  const auto t0 = Clock::now();
  const ModelConfig cfg = testing::tiny_model_config(9);
  CaptionModel probe(cfg);
  const std::size_t params = probe.parameter_count();
  const auto r = testing::gradient_check(cfg, LossWeights{0.9, 0.5, 0.2, true}, kGradientSamples, 31);
  const double secs = seconds_since(t0);
  return {params <= kGradientMaxParams && r.checked == kGradientSamples && r.max_rel <= kGradientTolerance &&
              secs < kGradientSeconds,
          std::to_string(params) + " params, " + std::to_string(r.checked) + " sampled, max rel err " +
              fmt("%.3g", r.max_rel) + " (<= " + fmt("%g", kGradientTolerance) + "), " + fmt("%.2f", secs) +
              " s (< " + fmt("%g", kGradientSeconds) + " s)"};
}

Outcome loss_algebra(const fs::path&) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 10.0), lam(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < kLossTuples; ++i) {
    LossConfig cfg;
    cfg.lambda_l1 = lam(rng);
    cfg.lambda_ent = lam(rng);
    const LossTerms cap{u(rng), u(rng), u(rng)}, sgr{u(rng), u(rng), u(rng)};
    worst = std::max(worst, std::abs(combined_loss(cap, sgr, 1.0, cfg) - baseline_loss(cap.loss, cap.l1, cap.entropy, cfg)));
  }

  // Ten-epoch phases, scene-graph phase first.
  auto blocks = [](double first, double second) {
    std::vector<double> v;
    for (int b = 0; b < 6; ++b) v.insert(v.end(), 10, b % 2 == 0 ? first : second);
    return v;
  };
  const std::vector<std::pair<AlphaMode, std::vector<double>>> patterns{
      {AlphaMode::alternative(0.0, 1.0), blocks(0.0, 1.0)},
      {AlphaMode::alternative(0.1, 0.9), blocks(0.1, 0.9)},
      {AlphaMode::linear_int(0.9), std::vector<double>(60, 0.9)}};
  int alpha_mismatch = 0;
  for (const auto& [mode, expect] : patterns) {
    LossConfig cfg;
    cfg.alpha_mode = mode;
    for (int e = 0; e < 60; ++e) alpha_mismatch += alpha_schedule(e, cfg) != expect[static_cast<std::size_t>(e)];
  }

  const double lr[3] = {lr_schedule(0), lr_schedule(20), lr_schedule(40)};
  const double lr_expect[3] = {0.01, 0.001, 0.0001};
  double lr_err = 0.0;
  for (int i = 0; i < 3; ++i) lr_err = std::max(lr_err, std::abs(lr[i] - lr_expect[i]));

  return {worst <= kLossTolerance && alpha_mismatch == 0 && lr_err <= kLossTolerance,
          std::to_string(kLossTuples) + " tuples max |delta| " + fmt("%.3g", worst) + "; alpha mismatches over epochs 0-59: " +
              std::to_string(alpha_mismatch) + "; lr at 0/20/40 = " + fmt("%g", lr[0]) + "/" + fmt("%g", lr[1]) + "/" +
              fmt("%g", lr[2])};
}

world::GeneratorConfig generator(int count, std::uint64_t seed) {
  world::GeneratorConfig g;
  g.count = count;
  g.seed = seed;
  return g;
}

ExperimentConfig config_file(const std::string& rel, std::uint64_t seed) {
  ExperimentConfig c = load_config(source_path(rel));
  c.train.seed = seed;
  return c;
}

Outcome overfit(const fs::path& work) {
  const fs::path dir = work / "overfit";
  fs::remove_all(dir);
  world::GeneratorConfig g = generator(kOverfitSamples, 1);
  g.split = {1.0, 0.0, 0.0};
  world::generate_dataset(g, dir / "data");

  const ExperimentConfig cfg = config_file("configs/overfit.json", 1);
  const auto t0 = Clock::now();
  const TrainResult r = train(dir / "data", cfg, dir / "run", &std::cerr);
  const double secs = seconds_since(t0);
  const DatasetSplit split = load_dataset(dir / "data", Split::train);
  const PreparedData data = prepare_data(split, r.state.vocab, cfg.model, cfg.loss.sg_mode);
  const double em = exact_match_rate(caption_all(r.state.model, data), data);
  return {em >= kOverfitExactMatch && cfg.train.epochs <= kOverfitMaxEpochs && secs <= kOverfitSeconds,
          "configs/overfit.json, " + std::to_string(kOverfitSamples) + " samples, " +
              std::to_string(cfg.train.epochs) + " epochs: train exact match " + fmt("%.3f", em) + " (>= " +
              fmt("%g", kOverfitExactMatch) + "), " + fmt("%.1f", secs) + " s (<= " + fmt("%g", kOverfitSeconds) +
              " s)"};
}

struct BenchScores {
  double noun_f = 0.0, verb_f = 0.0, cider = 0.0, bleu4 = 0.0;
};

Outcome directional_benchmark(const fs::path& work) {
  const fs::path dir = work / "benchmark";
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  const std::vector<std::pair<std::string, std::string>> systems{{"baseline", "configs/benchmark/baseline.json"},
                                                                 {"linear_int", "configs/benchmark/linear_int.json"}};
  std::map<std::string, BenchScores> mean;
  std::string table = "system\tseed\tbest_epoch\tnoun_F\tverb_F\tverb_independent_F\tCIDEr\tBLEU-4\n";
  for (std::uint64_t seed : kBenchmarkSeeds) {
    const fs::path data = dir / ("data_seed" + std::to_string(seed));
    world::generate_dataset(generator(kBenchmarkSamples, seed), data);
    for (const auto& [name, file] : systems) {
      const ExperimentConfig cfg = config_file(file, seed);
      const fs::path run = dir / (name + "_seed" + std::to_string(seed));
      std::cerr << "benchmark: " << name << " seed " << seed << "\n";
      const TrainResult tr = train(data, cfg, run, &std::cerr);
      const TrainState best = load_checkpoint(run / "checkpoints" / "best.ckpt");
      const EvalOutput ev = evaluate(best, data, Split::test, default_lexicon(best, data), {{}, name});
      write_text_file(run / "test_report.tsv", format_report({ev.report}));
      auto& m = mean[name];
      const double n = static_cast<double>(std::size(kBenchmarkSeeds));
      m.noun_f += ev.report.noun.f / n;
      m.verb_f += ev.report.verb.f / n;
      m.cider += ev.report.cider / n;
      m.bleu4 += ev.report.bleu[3] / n;
      table += name + "\t" + std::to_string(seed) + "\t" + std::to_string(tr.best_epoch) + "\t" +
               fmt("%.6f", ev.report.noun.f) + "\t" + fmt("%.6f", ev.report.verb.f) + "\t" +
               fmt("%.6f", ev.report.verb_independent.f) + "\t" + fmt("%.6f", ev.report.cider) + "\t" +
               fmt("%.6f", ev.report.bleu[3]) + "\n";
      write_text_file(dir / "results.tsv", table);
    }
  }
  const double secs = seconds_since(t0);
  const auto& b = mean["baseline"];
  const auto& l = mean["linear_int"];
  const bool pass = l.noun_f >= b.noun_f && l.verb_f >= b.verb_f && l.cider >= b.cider - kBenchmarkCiderSlack &&
                    secs <= kBenchmarkSeconds;
  return {pass, "mean over 3 seeds, " + std::to_string(kBenchmarkSamples) + " samples: noun-F " +
                    fmt("%.4f", l.noun_f) + " vs " + fmt("%.4f", b.noun_f) + ", verb-F " + fmt("%.4f", l.verb_f) +
                    " vs " + fmt("%.4f", b.verb_f) + ", CIDEr " + fmt("%.4f", l.cider) + " vs " + fmt("%.4f", b.cider) +
                    " (slack " + fmt("%g", kBenchmarkCiderSlack) + "), BLEU-4 " + fmt("%.4f", l.bleu4) + " vs " +
                    fmt("%.4f", b.bleu4) + " (linear_int(0.9) all vs baseline); " + fmt("%.0f", secs) + " s (<= " +
                    fmt("%g", kBenchmarkSeconds) + " s)"};
}

Outcome graph_oracles(const fs::path&) {
  std::mt19937_64 rng(99);
  int diff_mismatch = 0;
  for (int i = 0; i < kOracleInstances; ++i) {
    StatePairSample s;
    s.graphs_a = testing::random_triplet_set(rng, 8);
    s.graphs_b = testing::random_triplet_set(rng, 8);
    const Vocabulary vocab = build_vocabulary({s}, 1);
    const int max_triplets = 1 + static_cast<int>(rng() % 10);
    const auto got = scene_graph_targets(s, TargetMode::diff, vocab, max_triplets);

    std::vector<std::array<int, 3>> ids;
    for (const auto& t : oracle::symmetric_difference({s.graphs_a.begin(), s.graphs_a.end()},
                                                      {s.graphs_b.begin(), s.graphs_b.end()})) {
      ids.push_back({vocab.id(t.subject), vocab.id(t.relationship), vocab.id(t.object)});
    }
    std::sort(ids.begin(), ids.end());
    std::vector<int> expect(static_cast<std::size_t>(3 * max_triplets + 1), Vocabulary::kPad);
    std::size_t k = 0;
    for (std::size_t t = 0; t < ids.size() && t < static_cast<std::size_t>(max_triplets); ++t) {
      for (int v : ids[t]) expect[k++] = v;
    }
    expect[k] = Vocabulary::kEos;
    diff_mismatch += got != expect;
  }
  int pair_mismatch = 0;
  std::size_t pairs = 0;
  for (int i = 0; i < kOracleInstances; ++i) {
    const AnnotationTimeline tl = testing::random_timeline(rng);
    const double margin = 0.25 * static_cast<double>(1 + rng() % 4);
    const auto got = extract_state_pairs(tl, margin).pairs;
    pairs += got.size();
    pair_mismatch += got != oracle::extract_pairs(tl, margin);
  }
  return {diff_mismatch == 0 && pair_mismatch == 0,
          "scene_graph_targets(diff) mismatches " + std::to_string(diff_mismatch) + "/" +
              std::to_string(kOracleInstances) + "; extract_state_pairs mismatches " + std::to_string(pair_mismatch) +
              "/" + std::to_string(kOracleInstances) + " (" + std::to_string(pairs) + " pairs)"};
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  world::generate_dataset(generator(80, 5), dir / "data");
  ExperimentConfig cfg = default_config();
  cfg.loss.alpha_mode = AlphaMode::linear_int(0.9);
  cfg.train.epochs = 2;
  train(dir / "data", cfg, dir / "a");
  const TrainResult second = train(dir / "data", cfg, dir / "b");
  const bool logs_equal = read_text_file(dir / "a" / "train_log.tsv") == read_text_file(dir / "b" / "train_log.tsv");

  const TrainState loaded = load_checkpoint(dir / "b" / "checkpoints" / "last.ckpt");
  const DatasetSplit split = load_dataset(dir / "data", Split::train);
  int differing = 0;
  for (int i = 0; i < kProbeSamples; ++i) {
    const auto& s = split.samples[static_cast<std::size_t>(i)];
    const Image a = read_png(split.resolve(s.image_a));
    const Image b = read_png(split.resolve(s.image_b));
    for (SearchStrategy strategy : {SearchStrategy::greedy(), SearchStrategy::beam(3)}) {
      differing += second.state.model.caption(a, b, strategy) != loaded.model.caption(a, b, strategy);
    }
  }
  return {logs_equal && differing == 0,
          std::string("epoch logs ") + (logs_equal ? "identical" : "differ") + " across two seeded runs; " +
              std::to_string(differing) + " of " + std::to_string(2 * kProbeSamples) +
              " probe captions (greedy and beam 3) differ after save/load"};
}

const std::vector<std::pair<std::string, std::function<Outcome(const fs::path&)>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome(const fs::path&)>>> all{
      {"metric_oracles", metric_oracles},
      {"gradient_check", gradient_check},
      {"loss_algebra", loss_algebra},
      {"overfit", overfit},
      {"directional_benchmark", directional_benchmark},
      {"graph_oracles", graph_oracles},
      {"determinism_roundtrip", determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria; prints one PASS/FAIL line per criterion"};
  std::vector<std::string> selected;
  std::string work = (fs::temp_directory_path() / "opcap_acceptance").string();
  bool list = false;
  app.add_option("criteria", selected, "Criteria to run (default: all)");
  app.add_option("--work", work, "Scratch directory for datasets and runs");
  app.add_flag("--list", list, "List criterion names");
  CLI11_PARSE(app, argc, argv);

  if (list) {
    for (const auto& [name, fn] : criteria()) std::cout << name << "\n";
    return 0;
  }
  for (const auto& s : selected) {
    bool known = false;
    for (const auto& [name, fn] : criteria()) known = known || name == s;
    if (!known) {
      std::cerr << "unknown criterion '" << s << "'\n";
      return 2;
    }
  }
  fs::create_directories(work);
  bool all_pass = true;
  for (const auto& [name, fn] : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
    Outcome o;
    try {
      o = fn(work);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
