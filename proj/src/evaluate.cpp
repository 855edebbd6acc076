#include "opcap/evaluate.hpp"

#include "opcap/util.hpp"

namespace opcap {

void check_vocabulary(const TrainState& checkpoint, const std::filesystem::path& dataset_dir) {
  if (!std::filesystem::exists(dataset_dir / "train.jsonl")) {
    throw Error("cannot verify the vocabulary: " + (dataset_dir / "train.jsonl").string() + " not found");
  }
  const DatasetSplit train = load_dataset(dataset_dir, Split::train);
  const Vocabulary rebuilt = build_vocabulary(train.samples, checkpoint.config.train.min_count);
  if (rebuilt.hash() != checkpoint.vocab.hash()) {
    throw Error("vocabulary mismatch: checkpoint " + checkpoint.vocab.hash() + " (" +
                std::to_string(checkpoint.vocab.size()) + " tokens), dataset " + rebuilt.hash() + " (" +
                std::to_string(rebuilt.size()) + " tokens)");
  }
}

PosLexicon default_lexicon(const TrainState& checkpoint, const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "lexicon.tsv";
  if (std::filesystem::exists(path)) return PosLexicon(load_lexicon(path));
  std::unordered_map<std::string, PosTag> tags;
  for (int i = Vocabulary::kReserved; i < checkpoint.vocab.size(); ++i) {
    tags[checkpoint.vocab.token(i)] = checkpoint.vocab.pos(i);
  }
  return PosLexicon(std::move(tags));
}

double exact_match_rate(const std::vector<std::vector<int>>& generated, const PreparedData& data) {
  if (generated.size() != data.size()) throw ShapeError("exact_match_rate: count mismatch");
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ref = data.captions[i];
    std::vector<int> expect;
    for (std::size_t k = 1; k < ref.size(); ++k) {
      expect.push_back(ref[k]);
      if (ref[k] == Vocabulary::kEos) break;
    }
    if (generated[i] == expect) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

EvalOutput evaluate(const TrainState& checkpoint, const std::filesystem::path& dataset_dir, Split split,
                    const PosLexicon& lexicon, const EvalOptions& options) {
  check_vocabulary(checkpoint, dataset_dir);
  const DatasetSplit data = load_dataset(dataset_dir, split);
  ExperimentConfig cfg = checkpoint.config;
  if (!options.features.empty()) cfg.train.features = options.features.string();
  const FeatureStore features = load_configured_features(cfg, dataset_dir);
  const PreparedData prepared = prepare_data(data, checkpoint.vocab, cfg.model, cfg.loss.sg_mode,
                                             cfg.train.features.empty() ? nullptr : &features);

  std::vector<std::vector<int>> ids;
  if (options.strategy.kind == SearchStrategy::Kind::greedy) {
    ids = caption_all(checkpoint.model, prepared);
  } else {
    for (std::size_t i = 0; i < prepared.size(); ++i) {
      ids.push_back(prepared.precomputed()
                        ? checkpoint.model.caption(prepared.features_a[i], prepared.features_b[i], options.strategy)
                        : checkpoint.model.caption(prepared.images_a[i], prepared.images_b[i], options.strategy));
    }
  }
  EvalOutput out;
  std::vector<Tokens> hyps;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    hyps.push_back(ids_to_tokens(ids[i], checkpoint.vocab));
    out.ids.push_back(prepared.ids[i]);
    out.captions.push_back(detokenize(ids[i], checkpoint.vocab));
  }
  out.exact_match = exact_match_rate(ids, prepared);
  out.report = score_captions(hyps, prepared.references, lexicon, checkpoint.config.rouge_beta);
  out.report.system = options.system;
  out.report.validate();
  return out;
}

}  // namespace opcap
