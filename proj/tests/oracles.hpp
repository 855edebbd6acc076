#pragma once

// Deliberately naive reference implementations used to cross-check the
// library. They favour obviousness over speed and share no code with src/.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "opcap/dataset.hpp"
#include "opcap/timeline.hpp"

namespace opcap::oracle {

using Toks = std::vector<std::string>;
using Gram = std::vector<std::string>;

inline std::map<Gram, int> count_grams(const Toks& s, int n) {
  std::map<Gram, int> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) out[Gram(s.begin() + i, s.begin() + i + n)] += 1;
  return out;
}

/// Sentence BLEU-n with the same smoothing convention (p1 raw, add-one above).
inline double bleu_n(const Toks& hyp, const std::vector<Toks>& refs, int max_n) {
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double match = 0, total = 0;
    for (const auto& [g, c] : count_grams(hyp, n)) {
      int best = 0;
      for (const auto& r : refs) {
        int in_ref = 0;
        for (int i = 0; i + n <= static_cast<int>(r.size()); ++i) {
          if (Gram(r.begin() + i, r.begin() + i + n) == g) ++in_ref;
        }
        best = std::max(best, in_ref);
      }
      match += std::min(c, best);
      total += c;
    }
    const double p = n == 1 ? match / total : (match + 1) / (total + 1);
    if (p == 0) return 0.0;
    log_sum += std::log(p);
  }
  // Closest reference length, shorter on ties.
  double c = static_cast<double>(hyp.size());
  double r = -1;
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (r < 0 || std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

/// Longest common subsequence by enumerating every subsequence of `a`.
inline std::size_t lcs_brute(const Toks& a, const Toks& b) {
  std::size_t best = 0;
  const std::size_t n = a.size();
  for (unsigned long mask = 0; mask < (1ul << n); ++mask) {
    Toks sub;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1ul << i)) sub.push_back(a[i]);
    }
    if (sub.size() <= best) continue;
    std::size_t j = 0;
    for (std::size_t k = 0; k < b.size() && j < sub.size(); ++k) {
      if (b[k] == sub[j]) ++j;
    }
    if (j == sub.size()) best = sub.size();
  }
  return best;
}

inline double rouge_l(const Toks& hyp, const Toks& ref, double beta) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_brute(hyp, ref));
  if (l == 0) return 0.0;
  const double p = l / static_cast<double>(hyp.size()), r = l / static_cast<double>(ref.size());
  return (1 + beta * beta) * p * r / (r + beta * beta * p);
}

/// tf-idf cosine CIDEr over dense vectors indexed by every n-gram in the corpus.
inline double cider(const std::vector<Toks>& hyps, const std::vector<std::vector<Toks>>& refs) {
  const double big_n = static_cast<double>(hyps.size());
  double total = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double per_n = 0.0;
    for (int n = 1; n <= 4; ++n) {
      std::set<Gram> universe;
      for (const auto& rs : refs) {
        for (const auto& r : rs) {
          for (const auto& kv : count_grams(r, n)) universe.insert(kv.first);
        }
      }
      for (const auto& kv : count_grams(hyps[i], n)) universe.insert(kv.first);
      auto idf = [&](const Gram& g) {
        int df = 0;
        for (const auto& rs : refs) {
          bool in = false;
          for (const auto& r : rs) in = in || count_grams(r, n).count(g) > 0;
          df += in ? 1 : 0;
        }
        return std::log(big_n) - std::log(std::max(1.0, static_cast<double>(df)));
      };
      auto vec = [&](const Toks& s) {
        std::vector<double> v;
        const auto c = count_grams(s, n);
        for (const auto& g : universe) v.push_back((c.count(g) ? c.at(g) : 0) * idf(g));
        return v;
      };
      const auto h = vec(hyps[i]);
      double sim = 0.0;
      for (const auto& r : refs[i]) {
        const auto rv = vec(r);
        double dot = 0, nh = 0, nr = 0;
        for (std::size_t k = 0; k < h.size(); ++k) {
          dot += h[k] * rv[k];
          nh += h[k] * h[k];
          nr += rv[k] * rv[k];
        }
        if (nh > 0 && nr > 0) sim += dot / std::sqrt(nh * nr);
      }
      per_n += sim / static_cast<double>(refs[i].size());
    }
    total += 10.0 * per_n / 4.0;
  }
  return hyps.empty() ? 0.0 : total / big_n;
}

/// Symmetric difference by membership tests over plain vectors.
inline std::vector<TripletLabel> symmetric_difference(const std::vector<TripletLabel>& a,
                                                      const std::vector<TripletLabel>& b) {
  std::vector<TripletLabel> out;
  for (const auto& t : a) {
    if (std::find(b.begin(), b.end(), t) == b.end()) out.push_back(t);
  }
  for (const auto& t : b) {
    if (std::find(a.begin(), a.end(), t) == a.end()) out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Replays the timeline from scratch for every timestamp and diffs the states.
inline std::vector<StatePairCandidate> extract_pairs(const AnnotationTimeline& tl, double margin) {
  std::vector<double> stamps;
  for (const auto& e : tl.events) {
    if (stamps.empty() || stamps.back() != e.timestamp) stamps.push_back(e.timestamp);
  }
  auto state_through = [&](double t, bool inclusive) {
    std::map<std::pair<std::string, std::string>, std::string> s;
    for (const auto& e : tl.events) {
      if (e.timestamp < t || (inclusive && e.timestamp == t)) {
        s[{e.triplet.subject, e.triplet.object}] = e.triplet.relationship;
      }
    }
    return s;
  };
  std::vector<StatePairCandidate> out;
  for (std::size_t k = 1; k < stamps.size(); ++k) {
    const double t = stamps[k];
    const auto before = state_through(t, false);
    const auto after = state_through(t, true);
    for (const auto& [key, rel] : after) {
      auto it = before.find(key);
      if (it != before.end() && it->second == rel) continue;
      if (t - margin < tl.start || t + margin > tl.end) continue;
      out.push_back({t - margin, t + margin, std::llround((t - margin) * tl.fps), std::llround((t + margin) * tl.fps),
                     {key.first, rel, key.second}});
    }
  }
  return out;
}

}  // namespace opcap::oracle
