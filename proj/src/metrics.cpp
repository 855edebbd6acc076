#include "opcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_set>

#include "opcap/util.hpp"

namespace opcap {

namespace {

using NgramCounts = std::unordered_map<std::string, int>;

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + static_cast<std::size_t>(k)];
    }
    ++out[key];
  }
  return out;
}

std::size_t closest_ref_length(std::size_t hyp_len, const std::vector<Tokens>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > hyp_len ? len - hyp_len : hyp_len - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

// Clipped matches and total hypothesis n-grams.
std::pair<std::size_t, std::size_t> clipped(const Tokens& hyp, const std::vector<Tokens>& refs, int n) {
  const NgramCounts h = ngrams(hyp, n);
  NgramCounts max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
  }
  std::size_t match = 0, total = 0;
  for (const auto& [g, c] : h) {
    total += static_cast<std::size_t>(c);
    auto it = max_ref.find(g);
    if (it != max_ref.end()) match += static_cast<std::size_t>(std::min(c, it->second));
  }
  return {match, total};
}

double brevity_penalty(double c, double r) {
  if (c <= 0.0) return 0.0;
  return c > r ? 1.0 : std::exp(1.0 - r / c);
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<double> bleu(const Tokens& hypothesis, const std::vector<Tokens>& references, int max_n) {
  if (max_n < 1) throw ConfigError("bleu: max_n must be at least 1");
  if (references.empty()) throw ShapeError("bleu: no references");
  std::vector<double> out(static_cast<std::size_t>(max_n), 0.0);
  if (hypothesis.empty()) return out;
  const double bp = brevity_penalty(static_cast<double>(hypothesis.size()),
                                    static_cast<double>(closest_ref_length(hypothesis.size(), references)));
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto [m, t] = clipped(hypothesis, references, n);
    double p;
    if (n == 1) {
      p = static_cast<double>(m) / static_cast<double>(t);
    } else {
      p = (static_cast<double>(m) + 1.0) / (static_cast<double>(t) + 1.0);
    }
    if (p == 0.0) return out;  // every cumulative score from here on is zero
    log_sum += std::log(p);
    out[static_cast<std::size_t>(n - 1)] = bp * std::exp(log_sum / n);
  }
  return out;
}

std::vector<double> corpus_bleu(const std::vector<Tokens>& hypotheses,
                                const std::vector<std::vector<Tokens>>& references, int max_n) {
  if (max_n < 1) throw ConfigError("bleu: max_n must be at least 1");
  if (hypotheses.size() != references.size()) throw ShapeError("corpus_bleu: hypothesis/reference count mismatch");
  std::vector<double> match(static_cast<std::size_t>(max_n), 0.0), total(static_cast<std::size_t>(max_n), 0.0);
  double c = 0.0, r = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty()) throw ShapeError("corpus_bleu: sample without references");
    c += static_cast<double>(hypotheses[i].size());
    r += static_cast<double>(closest_ref_length(hypotheses[i].size(), references[i]));
    for (int n = 1; n <= max_n; ++n) {
      const auto [m, t] = clipped(hypotheses[i], references[i], n);
      match[static_cast<std::size_t>(n - 1)] += static_cast<double>(m);
      total[static_cast<std::size_t>(n - 1)] += static_cast<double>(t);
    }
  }
  std::vector<double> out(static_cast<std::size_t>(max_n), 0.0);
  const double bp = brevity_penalty(c, r);
  double log_sum = 0.0;
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (match[n] == 0.0) break;
    log_sum += std::log(match[n] / total[n]);
    out[n] = bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

double rouge_l(const Tokens& hypothesis, const Tokens& reference, double beta) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const double l = static_cast<double>(lcs(hypothesis, reference));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(hypothesis.size());
  const double r = l / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(const Tokens& hypothesis, const std::vector<Tokens>& references, double beta) {
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, rouge_l(hypothesis, r, beta));
  return best;
}

CiderResult cider(const std::vector<Tokens>& hypotheses, const std::vector<std::vector<Tokens>>& references) {
  if (hypotheses.size() != references.size()) throw ShapeError("cider: hypothesis/reference count mismatch");
  CiderResult res;
  const std::size_t count = hypotheses.size();
  res.per_sample.assign(count, 0.0);
  if (count == 0) return res;
  const double log_n = std::log(static_cast<double>(count));

  std::array<std::unordered_map<std::string, double>, 4> df;
  for (const auto& refs : references) {
    for (int n = 1; n <= 4; ++n) {
      std::unordered_set<std::string> seen;
      for (const auto& r : refs) {
        for (const auto& kv : ngrams(r, n)) seen.insert(kv.first);
      }
      for (const auto& g : seen) df[static_cast<std::size_t>(n - 1)][g] += 1.0;
    }
  }
  auto weight = [&](int n, const std::string& g) {
    const auto& d = df[static_cast<std::size_t>(n - 1)];
    auto it = d.find(g);
    return log_n - std::log(std::max(1.0, it == d.end() ? 0.0 : it->second));
  };

  bool any_weight = false;
  for (std::size_t i = 0; i < count; ++i) {
    double sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
      NgramCounts h = ngrams(hypotheses[i], n);
      std::unordered_map<std::string, double> hv;
      double hn = 0.0;
      for (const auto& [g, c] : h) {
        const double v = c * weight(n, g);
        hv[g] = v;
        hn += v * v;
        any_weight = any_weight || v != 0.0;
      }
      double avg = 0.0;
      for (const auto& r : references[i]) {
        double dot = 0.0, rn = 0.0;
        for (const auto& [g, c] : ngrams(r, n)) {
          const double v = c * weight(n, g);
          rn += v * v;
          any_weight = any_weight || v != 0.0;
          auto it = hv.find(g);
          if (it != hv.end()) dot += it->second * v;
        }
        if (hn > 0.0 && rn > 0.0) avg += dot / (std::sqrt(hn) * std::sqrt(rn));
      }
      if (!references[i].empty()) avg /= static_cast<double>(references[i].size());
      sum += avg;
    }
    res.per_sample[i] = 10.0 * sum / 4.0;
  }
  if (!any_weight) {
    res.degenerate = true;
    std::fill(res.per_sample.begin(), res.per_sample.end(), 0.0);
    return res;
  }
  for (double v : res.per_sample) res.score += v;
  res.score /= static_cast<double>(count);
  return res;
}

std::string_view to_string(ContentClass c) {
  switch (c) {
    case ContentClass::noun: return "noun";
    case ContentClass::verb: return "verb";
    case ContentClass::verb_independent: return "verb_independent";
  }
  return "?";
}

PosTag PosLexicon::operator()(const std::string& token) const {
  auto it = tags_.find(token);
  return it == tags_.end() ? PosTag::other : it->second;
}

bool PosLexicon::in_class(const std::string& token, ContentClass c) const {
  const PosTag t = (*this)(token);
  switch (c) {
    case ContentClass::noun: return t == PosTag::noun;
    case ContentClass::verb: return t == PosTag::verb || t == PosTag::aux_verb;
    case ContentClass::verb_independent: return t == PosTag::verb;
  }
  return false;
}

PRF content_word_prf(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                     const PosLexicon& lexicon, ContentClass cls) {
  if (hypotheses.size() != references.size()) throw ShapeError("content_word_prf: count mismatch");
  PRF r;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    std::map<std::string, std::size_t> h, ref;
    for (const auto& t : hypotheses[i]) {
      if (lexicon.in_class(t, cls)) ++h[t];
    }
    for (const auto& t : references[i]) {
      if (lexicon.in_class(t, cls)) ++ref[t];
    }
    for (const auto& [t, c] : h) {
      r.hypothesis_count += c;
      auto it = ref.find(t);
      if (it != ref.end()) r.matched += std::min(c, it->second);
    }
    for (const auto& kv : ref) r.reference_count += kv.second;
  }
  if (r.hypothesis_count > 0) r.precision = static_cast<double>(r.matched) / static_cast<double>(r.hypothesis_count);
  if (r.reference_count > 0) r.recall = static_cast<double>(r.matched) / static_cast<double>(r.reference_count);
  if (r.precision + r.recall > 0.0) r.f = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

void EvalReport::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0 + 1e-12)) throw Error(std::string(name) + " out of [0, 1]: " + std::to_string(v));
  };
  for (double v : bleu) unit(v, "BLEU");
  for (double v : corpus_bleu) unit(v, "corpus BLEU");
  unit(rouge_l, "ROUGE-L");
  if (!(cider >= 0.0)) throw Error("CIDEr is negative");
  for (const PRF* p : {&noun, &verb, &verb_independent}) {
    unit(p->precision, "precision");
    unit(p->recall, "recall");
    unit(p->f, "F");
    const double expect =
        p->precision + p->recall > 0.0 ? 2.0 * p->precision * p->recall / (p->precision + p->recall) : 0.0;
    if (std::abs(expect - p->f) > 1e-9) throw Error("F is not the harmonic mean of P and R");
  }
}

EvalReport score_captions(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                          const PosLexicon& lexicon, double rouge_beta) {
  if (hypotheses.size() != references.size()) throw ShapeError("score_captions: count mismatch");
  EvalReport rep;
  rep.samples = hypotheses.size();
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back({r});
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto b = bleu(hypotheses[i], refs[i], 4);
    for (std::size_t n = 0; n < 4; ++n) rep.bleu[n] += b[n];
    rep.rouge_l += rouge_l(hypotheses[i], references[i], rouge_beta);
  }
  if (!hypotheses.empty()) {
    for (double& v : rep.bleu) v /= static_cast<double>(hypotheses.size());
    rep.rouge_l /= static_cast<double>(hypotheses.size());
    const auto cb = corpus_bleu(hypotheses, refs, 4);
    std::copy(cb.begin(), cb.end(), rep.corpus_bleu.begin());
  }
  const CiderResult c = cider(hypotheses, refs);
  rep.cider = c.score;
  rep.cider_degenerate = c.degenerate;
  rep.noun = content_word_prf(hypotheses, references, lexicon, ContentClass::noun);
  rep.verb = content_word_prf(hypotheses, references, lexicon, ContentClass::verb);
  rep.verb_independent = content_word_prf(hypotheses, references, lexicon, ContentClass::verb_independent);
  return rep;
}

std::string format_report(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "# automatic\n"
     << "system\tsamples\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU-4\tROUGE-L\tCIDEr\t"
     << "corpus_BLEU-1\tcorpus_BLEU-2\tcorpus_BLEU-3\tcorpus_BLEU-4\n";
  for (const auto& r : reports) {
    os << r.system << '\t' << r.samples;
    for (double v : r.bleu) os << '\t' << fmt(v);
    os << '\t' << fmt(r.rouge_l) << '\t' << fmt(r.cider);
    for (double v : r.corpus_bleu) os << '\t' << fmt(v);
    os << '\n';
  }
  os << "\n# content_words\n"
     << "system\tnoun_P\tnoun_R\tnoun_F\tverb_P\tverb_R\tverb_F\t"
     << "verb_independent_P\tverb_independent_R\tverb_independent_F\n";
  for (const auto& r : reports) {
    os << r.system;
    for (const PRF* p : {&r.noun, &r.verb, &r.verb_independent}) {
      os << '\t' << fmt(p->precision) << '\t' << fmt(p->recall) << '\t' << fmt(p->f);
    }
    os << '\n';
  }
  return os.str();
}

std::vector<EvalReport> parse_report(const std::string& text) {
  std::vector<EvalReport> out;
  std::istringstream is(text);
  std::string line, section;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, '\t')) f.push_back(cur);
    return f;
  };
  auto find = [&](const std::string& name) -> EvalReport& {
    for (auto& r : out) {
      if (r.system == name) return r;
    }
    out.push_back({});
    out.back().system = name;
    return out.back();
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      section = line.substr(2);
      continue;
    }
    const auto f = split(line);
    if (f.empty() || f[0] == "system") continue;
    try {
      if (section == "automatic" && f.size() == 12) {
        EvalReport& r = find(f[0]);
        r.samples = std::stoul(f[1]);
        for (std::size_t n = 0; n < 4; ++n) r.bleu[n] = std::stod(f[2 + n]);
        r.rouge_l = std::stod(f[6]);
        r.cider = std::stod(f[7]);
        for (std::size_t n = 0; n < 4; ++n) r.corpus_bleu[n] = std::stod(f[8 + n]);
      } else if (section == "content_words" && f.size() == 10) {
        EvalReport& r = find(f[0]);
        PRF* prf[] = {&r.noun, &r.verb, &r.verb_independent};
        for (std::size_t k = 0; k < 3; ++k) {
          prf[k]->precision = std::stod(f[1 + 3 * k]);
          prf[k]->recall = std::stod(f[2 + 3 * k]);
          prf[k]->f = std::stod(f[3 + 3 * k]);
        }
      } else {
        throw LoadError("malformed report line: " + line);
      }
    } catch (const std::invalid_argument&) {
      throw LoadError("malformed number in report line: " + line);
    }
  }
  return out;
}

}  // namespace opcap
