#include "opcap/cli.hpp"

#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "opcap/checkpoint.hpp"
#include "opcap/config.hpp"
#include "opcap/evaluate.hpp"
#include "opcap/image.hpp"
#include "opcap/plots.hpp"
#include "opcap/timeline.hpp"
#include "opcap/util.hpp"
#include "opcap/world.hpp"

namespace opcap {

namespace {

using nlohmann::json;

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string out;

  // gen-data
  int count = -1;
  int workers = 1;
  // extract-pairs
  std::string timeline;
  double margin = 0.5;
  // train / eval
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string report;
  std::string lexicon;
  std::string system = "model";
  int beam = 0;
  std::string features;
  std::vector<std::string> splits;
  // caption
  std::string image_a, image_b;
  // report-plots
  std::string log;
  std::vector<std::string> reports;
};

SearchStrategy strategy_of(const Options& o) {
  return o.beam > 0 ? SearchStrategy::beam(o.beam) : SearchStrategy::greedy();
}

int gen_data(const Options& o, std::ostream& out) {
  json doc = json::object();
  if (!o.config.empty()) doc = json::parse(read_text_file(o.config));
  const json schema = json::parse(world::generator_config_to_json(world::GeneratorConfig{}));
  for (const auto& s : o.overrides) apply_override(doc, s, schema);
  if (o.count >= 0) doc["count"] = o.count;
  if (o.seed >= 0) doc["seed"] = o.seed;
  doc["workers"] = o.workers;
  const world::GeneratorConfig cfg = world::generator_config_from_json(doc.dump());
  const auto manifest = world::generate_dataset(cfg, o.out);
  out << "wrote " << manifest.counts.train << " train, " << manifest.counts.dev << " dev, " << manifest.counts.test
      << " test samples to " << o.out << "\nchecksum " << manifest.checksum << "\n";
  return 0;
}

int extract_pairs(const Options& o, std::ostream& out, std::ostream& err) {
  const auto timeline = load_timeline(o.timeline);
  const auto result = extract_state_pairs(timeline, o.margin);
  std::ostringstream os;
  os << "frame_before\tframe_after\ttime_before\ttime_after\tsubject\trelationship\tobject\n";
  for (const auto& p : result.pairs) {
    os << p.frame_before << '\t' << p.frame_after << '\t' << p.time_before << '\t' << p.time_after << '\t'
       << p.changed.subject << '\t' << p.changed.relationship << '\t' << p.changed.object << '\n';
  }
  if (o.out.empty()) {
    out << os.str();
  } else {
    write_text_file(o.out, os.str());
  }
  for (const auto& s : result.skipped) err << "skipped: " << s << "\n";
  return 0;
}

int train_cmd(const Options& o, std::ostream& out, std::ostream& err) {
  json doc = json::object();
  if (!o.config.empty()) {
    try {
      doc = json::parse(read_text_file(o.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
  }
  for (const auto& s : o.overrides) apply_override(doc, s);
  if (o.seed >= 0) doc["train"]["seed"] = o.seed;
  const ExperimentConfig cfg = config_from_json(doc);
  const auto result = train(o.data, cfg, o.out, &err);
  out << "trained " << result.log.size() << " epochs; best dev BLEU-4 " << result.best_dev_bleu4 << " at epoch "
      << result.best_epoch << "\n";
  return 0;
}

int eval_cmd(const Options& o, std::ostream& out, std::ostream& err) {
  const TrainState ckpt = load_checkpoint(o.checkpoint);
  const PosLexicon lexicon = o.lexicon.empty() ? default_lexicon(ckpt, o.data) : PosLexicon(load_lexicon(o.lexicon));
  EvalOptions eo{strategy_of(o), o.system, o.features};
  const EvalOutput res = evaluate(ckpt, o.data, parse_split(o.split), lexicon, eo);
  const std::string text = format_report({res.report});
  err << "exact match " << res.exact_match << " over " << res.ids.size() << " samples\n";
  if (o.report.empty()) {
    out << text;
  } else {
    write_text_file(o.report, text);
    std::string captions;
    for (std::size_t i = 0; i < res.ids.size(); ++i) captions += res.ids[i] + '\t' + res.captions[i] + '\n';
    write_text_file(o.report + ".captions.tsv", captions);
    nlohmann::ordered_json echo;
    echo["checkpoint"] = o.checkpoint;
    echo["data"] = o.data;
    echo["split"] = o.split;
    echo["strategy"] = o.beam > 0 ? "beam" : "greedy";
    echo["beam"] = std::max(o.beam, 1);
    echo["lexicon"] = o.lexicon;
    echo["system"] = o.system;
    echo["features"] = o.features;
    echo["vocab_hash"] = ckpt.vocab.hash();
    echo["exact_match"] = res.exact_match;
    write_text_file(o.report + ".config.json", echo.dump(2) + "\n");
    out << text;
  }
  return 0;
}

int extract_features(const Options& o, std::ostream& out) {
  const TrainState ckpt = load_checkpoint(o.checkpoint);
  const std::vector<std::string> splits =
      o.splits.empty() ? std::vector<std::string>{"train", "dev", "test"} : o.splits;
  FeatureStore store;
  for (const auto& name : splits) {
    const auto file = std::filesystem::path(o.data) / (name + ".jsonl");
    if (o.splits.empty() && !std::filesystem::exists(file)) continue;
    const DatasetSplit split = load_dataset(o.data, parse_split(name));
    for (const auto& s : split.samples) {
      for (const auto* ref : {&s.image_a, &s.image_b}) {
        if (store.count(*ref)) continue;
        FeatureMap map = encode_image(read_png(split.resolve(*ref)), ckpt.model.encoder);
        store.emplace(*ref, std::move(map));
      }
    }
  }
  save_feature_file(o.out, store);
  out << "wrote " << store.size() << " feature maps to " << o.out << "\n";
  return 0;
}

int caption_cmd(const Options& o, std::ostream& out) {
  const TrainState ckpt = load_checkpoint(o.checkpoint);
  const Image a = read_png(o.image_a);
  const Image b = read_png(o.image_b);
  if (a.width != b.width || a.height != b.height) throw ShapeError("the two images differ in size");
  out << detokenize(ckpt.model.caption(a, b, strategy_of(o)), ckpt.vocab) << "\n";
  return 0;
}

int report_plots(const Options& o, std::ostream& out) {
  std::filesystem::create_directories(o.out);
  std::vector<std::string> written;
  if (!o.log.empty()) {
    const auto rows = parse_epoch_log(read_text_file(o.log));
    Series cap{"L_cap", {}}, sgr{"L_sgr", {}}, total{"total", {}}, bleu4{"dev BLEU-4", {}};
    bool any_sgr = false;
    for (const auto& r : rows) {
      cap.points.emplace_back(r.epoch, r.loss_cap);
      sgr.points.emplace_back(r.epoch, r.loss_sgr);
      total.points.emplace_back(r.epoch, r.loss_total);
      bleu4.points.emplace_back(r.epoch, r.dev_bleu4);
      any_sgr = any_sgr || r.loss_sgr != 0.0;
    }
    std::vector<Series> losses{cap, total};
    if (any_sgr) losses.push_back(sgr);
    write_text_file(std::filesystem::path(o.out) / "loss_curves.svg", line_chart_svg("Training loss", "epoch", losses));
    write_text_file(std::filesystem::path(o.out) / "dev_bleu4.svg", line_chart_svg("Dev BLEU-4", "epoch", {bleu4}));
    written.insert(written.end(), {"loss_curves.svg", "dev_bleu4.svg"});
  }
  std::vector<EvalReport> reports;
  for (const auto& path : o.reports) {
    for (auto& r : parse_report(read_text_file(path))) reports.push_back(std::move(r));
  }
  if (!reports.empty()) {
    std::vector<BarGroup> auto_groups, word_groups;
    for (const auto& r : reports) {
      auto_groups.push_back({r.system, {r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.rouge_l, r.cider / 10.0}});
      word_groups.push_back({r.system, {r.noun.f, r.verb.f, r.verb_independent.f}});
    }
    write_text_file(std::filesystem::path(o.out) / "automatic_metrics.svg",
                    bar_chart_svg("Automatic metrics (CIDEr / 10)",
                                  {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "CIDEr/10"}, auto_groups));
    write_text_file(std::filesystem::path(o.out) / "content_words.svg",
                    bar_chart_svg("Content-word F", {"noun", "verb", "verb-indep."}, word_groups));
    written.insert(written.end(), {"automatic_metrics.svg", "content_words.svg"});
  }
  if (written.empty()) throw ConfigError("report-plots needs --log and/or --report");
  nlohmann::ordered_json echo;
  echo["log"] = o.log;
  echo["reports"] = o.reports;
  echo["files"] = written;
  write_text_file(std::filesystem::path(o.out) / "plots.json", echo.dump(2) + "\n");
  for (const auto& w : written) out << (std::filesystem::path(o.out) / w).string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Operative-action captioning: data generation, training, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "Override a configuration value (key=value)");
    sub->add_option("--seed", o.seed, "Random seed")->check(CLI::NonNegativeNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic state-pair dataset");
  common(gen);
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--count", o.count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* ext = app.add_subcommand("extract-pairs", "Extract state pairs from an annotation timeline");
  ext->add_option("--timeline", o.timeline, "Timeline JSON")->required()->check(CLI::ExistingFile);
  ext->add_option("--margin", o.margin, "Seconds before/after each change")->check(CLI::NonNegativeNumber);
  ext->add_option("--out", o.out, "Output TSV (default: standard output)");

  auto* tr = app.add_subcommand("train", "Train a captioning model");
  common(tr);
  tr->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", o.out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", o.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  ev->add_option("--report", o.report, "Report file (TSV)");
  ev->add_option("--lexicon", o.lexicon, "POS lexicon (token TAB pos)")->check(CLI::ExistingFile);
  ev->add_option("--system", o.system, "System name in the report");
  ev->add_option("--beam", o.beam, "Beam width (default: greedy)")->check(CLI::PositiveNumber);
  ev->add_option("--features", o.features, "Precomputed feature file (overrides the checkpoint config)")
      ->check(CLI::ExistingFile);

  auto* feat = app.add_subcommand("extract-features", "Write a checkpoint's encoder outputs for a dataset");
  feat->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  feat->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  feat->add_option("--split", o.splits, "Split(s) to cover (default: all present)")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  feat->add_option("--out", o.out, "Output feature file")->required();

  auto* cap = app.add_subcommand("caption", "Caption one image pair");
  cap->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  cap->add_option("--image-a", o.image_a, "Current state image")->required()->check(CLI::ExistingFile);
  cap->add_option("--image-b", o.image_b, "Target state image")->required()->check(CLI::ExistingFile);
  cap->add_option("--beam", o.beam, "Beam width (default: greedy)")->check(CLI::PositiveNumber);

  auto* plots = app.add_subcommand("report-plots", "Render loss curves and metric bars as SVG");
  plots->add_option("--log", o.log, "train_log.tsv")->check(CLI::ExistingFile);
  plots->add_option("--report", o.reports, "Evaluation report(s)")->check(CLI::ExistingFile);
  plots->add_option("--out", o.out, "Output directory")->required();

  std::vector<std::string> argv_store{"opcap"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return gen_data(o, out);
    if (*ext) return extract_pairs(o, out, err);
    if (*tr) return train_cmd(o, out, err);
    if (*ev) return eval_cmd(o, out, err);
    if (*feat) return extract_features(o, out);
    if (*cap) return caption_cmd(o, out);
    if (*plots) return report_plots(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace opcap
