#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

#include "opcap/tensor.hpp"

namespace opcap {

/// Beam search over an arbitrary incremental scorer.
///
/// `step(states, last_tokens)` must return a V x n matrix of log-probabilities
/// (one column per live hypothesis) and advance each state in place. A
/// hypothesis finishes when it emits `eos` or reaches `max_len` tokens. The
/// result is the finished hypothesis with the highest cumulative log-probability;
/// ties go to the lexicographically smallest id sequence. Scores never increase
/// along a hypothesis, so the search stops once no live hypothesis can beat the
/// best finished one.
template <class State, class StepFn>
std::vector<int> beam_search(const State& initial, int beam, int max_len, int bos, int eos, StepFn&& step) {
  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
    State state;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double score;
  };
  auto better = [](double sa, const std::vector<int>& ta, double sb, const std::vector<int>& tb) {
    if (sa != sb) return sa > sb;
    return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
  };

  beam = std::max(beam, 1);
  std::vector<Hyp> alive{{{}, 0.0, initial}};
  std::vector<Hyp> finished;
  for (int len = 1; len <= max_len && !alive.empty(); ++len) {
    std::vector<State> states;
    std::vector<int> last;
    for (const auto& h : alive) {
      states.push_back(h.state);
      last.push_back(h.tokens.empty() ? bos : h.tokens.back());
    }
    const Matrix log_probs = step(states, last);

    std::vector<Candidate> cands;
    cands.reserve(static_cast<std::size_t>(log_probs.size()));
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (Eigen::Index v = 0; v < log_probs.rows(); ++v) {
        const double s = log_probs(v, static_cast<Eigen::Index>(i));
        if (s == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({i, static_cast<int>(v), alive[i].score + s});
      }
    }
    // Siblings share a prefix, so comparing (parent tokens, token) orders full sequences.
    auto seq_less = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = alive[a.parent].tokens;
      const auto& tb = alive[b.parent].tokens;
      if (ta != tb) return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
      return a.token < b.token;
    };
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(beam));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), seq_less);

    std::vector<Hyp> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Hyp h{alive[cand.parent].tokens, cand.score, states[cand.parent]};
      h.tokens.push_back(cand.token);
      if (cand.token == eos || len == max_len) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);

    if (!finished.empty() && !alive.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      double best_alive = -std::numeric_limits<double>::infinity();
      for (const auto& a : alive) best_alive = std::max(best_alive, a.score);
      if (best_finished > best_alive) break;
    }
  }
  if (finished.empty()) return {};
  const Hyp* best = &finished.front();
  for (const auto& f : finished) {
    if (better(f.score, f.tokens, best->score, best->tokens)) best = &f;
  }
  return best->tokens;
}

}  // namespace opcap
