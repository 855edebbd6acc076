#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "opcap/dataset.hpp"

namespace opcap {

using Tokens = std::vector<std::string>;

/// Sentence BLEU-1..max_n (cumulative geometric means). p1 is unsmoothed;
/// higher orders use add-one smoothing. Brevity penalty uses the reference
/// length closest to the hypothesis (shorter wins ties).
std::vector<double> bleu(const Tokens& hypothesis, const std::vector<Tokens>& references, int max_n = 4);

/// Corpus-level BLEU-1..max_n from pooled clipped counts, no smoothing.
std::vector<double> corpus_bleu(const std::vector<Tokens>& hypotheses,
                                const std::vector<std::vector<Tokens>>& references, int max_n = 4);

/// LCS-based F-measure.
double rouge_l(const Tokens& hypothesis, const Tokens& reference, double beta = 1.2);
/// Best score over several references.
double rouge_l(const Tokens& hypothesis, const std::vector<Tokens>& references, double beta = 1.2);

struct CiderResult {
  double score = 0.0;
  std::vector<double> per_sample;
  bool degenerate = false;  // every n-gram weight was zero
};

/// tf-idf n-gram cosine similarity (n = 1..4) averaged over references and n, times 10.
/// Document frequencies come from the reference sets of the given corpus.
CiderResult cider(const std::vector<Tokens>& hypotheses, const std::vector<std::vector<Tokens>>& references);

enum class ContentClass { noun, verb, verb_independent };
std::string_view to_string(ContentClass c);

/// token -> POS; unknown tokens fall into `other`.
class PosLexicon {
 public:
  PosLexicon() = default;
  explicit PosLexicon(std::unordered_map<std::string, PosTag> tags) : tags_(std::move(tags)) {}
  PosTag operator()(const std::string& token) const;
  bool in_class(const std::string& token, ContentClass c) const;
  std::size_t size() const { return tags_.size(); }

 private:
  std::unordered_map<std::string, PosTag> tags_;
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  std::size_t matched = 0;
  std::size_t hypothesis_count = 0;
  std::size_t reference_count = 0;
};

/// Micro-averaged multiset precision/recall/F over the tokens of one class.
PRF content_word_prf(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                     const PosLexicon& lexicon, ContentClass cls);

struct EvalReport {
  std::string system;
  std::size_t samples = 0;
  std::array<double, 4> bleu{};         // mean sentence BLEU-1..4
  std::array<double, 4> corpus_bleu{};  // pooled, unsmoothed
  double rouge_l = 0.0;
  double cider = 0.0;
  bool cider_degenerate = false;
  PRF noun, verb, verb_independent;

  /// Throws when a field leaves its bounds.
  void validate() const;
};

/// All metrics for aligned hypotheses and (single) references.
EvalReport score_captions(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                          const PosLexicon& lexicon, double rouge_beta = 1.2);

/// Tab-separated report: an automatic-metric table followed by a content-word table.
std::string format_report(const std::vector<EvalReport>& reports);
/// Reads the automatic-metric and content-word rows back.
std::vector<EvalReport> parse_report(const std::string& text);

}  // namespace opcap
