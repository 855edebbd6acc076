#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "opcap/metrics.hpp"
#include "opcap/training.hpp"

namespace opcap {

struct EvalOptions {
  SearchStrategy strategy;
  std::string system = "model";
  std::filesystem::path features;  // overrides the feature file named in the checkpoint config
};

struct EvalOutput {
  EvalReport report;
  std::vector<std::string> ids;
  std::vector<std::string> captions;
  double exact_match = 0.0;  // fraction of captions identical to their (length-capped) reference
};

/// Fraction of samples whose generated ids equal the reference ids up to EOS.
double exact_match_rate(const std::vector<std::vector<int>>& generated, const PreparedData& data);

/// Rebuilds the vocabulary from the dataset's train split and refuses to run
/// when its hash differs from the checkpoint's.
void check_vocabulary(const TrainState& checkpoint, const std::filesystem::path& dataset_dir);

/// Captions every sample of `split` and scores them against the references.
EvalOutput evaluate(const TrainState& checkpoint, const std::filesystem::path& dataset_dir, Split split,
                    const PosLexicon& lexicon, const EvalOptions& options = {});

/// Lexicon from `<dataset>/lexicon.tsv` when present, else from the checkpoint vocabulary's tags.
PosLexicon default_lexicon(const TrainState& checkpoint, const std::filesystem::path& dataset_dir);

}  // namespace opcap
