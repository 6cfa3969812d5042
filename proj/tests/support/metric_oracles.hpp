#pragma once

// Brute-force metric oracles: set-based runs, memoized recursive Levenshtein
// and an exact rational IoU matcher.

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "sstda/metrics.hpp"
#include "sstda/random.hpp"

namespace sstda::testing {

struct Run {
  int cls;
  std::set<std::size_t> frames;
};

inline std::vector<Run> oracle_runs(const std::vector<int>& labels) {
  std::vector<Run> runs;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (t == 0 || labels[t] != labels[t - 1]) runs.push_back({labels[t], {}});
    runs.back().frames.insert(t);
  }
  return runs;
}

inline std::size_t oracle_levenshtein(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j,
                               std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const auto key = std::pair{i, j};
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  std::size_t best = std::min(oracle_levenshtein(a, b, i + 1, j, memo), oracle_levenshtein(a, b, i, j + 1, memo)) + 1;
  best = std::min(best, oracle_levenshtein(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1));
  memo[key] = best;
  return best;
}

inline double oracle_edit(const std::vector<int>& pred, const std::vector<int>& gt) {
  std::vector<int> p, g;
  for (const auto& r : oracle_runs(pred)) p.push_back(r.cls);
  for (const auto& r : oracle_runs(gt)) g.push_back(r.cls);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  const double d = static_cast<double>(oracle_levenshtein(p, g, 0, 0, memo));
  return std::max(0.0, 100.0 * (1.0 - d / static_cast<double>(std::max(p.size(), g.size()))));
}

inline OverlapCounts oracle_counts(const std::vector<int>& pred, const std::vector<int>& gt, int k) {
  const auto p = oracle_runs(pred), g = oracle_runs(gt);
  std::vector<bool> taken(g.size(), false);
  OverlapCounts c;
  for (const auto& pr : p) {
    // Exact rational IoU as (intersection, union) frame counts.
    std::size_t best_i = 0, best_u = 1, best_j = g.size();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j].cls != pr.cls) continue;
      std::set<std::size_t> inter, uni = pr.frames;
      for (std::size_t f : g[j].frames) {
        if (pr.frames.count(f)) inter.insert(f);
        uni.insert(f);
      }
      if (best_j == g.size() || inter.size() * best_u > best_i * uni.size()) {
        best_i = inter.size();
        best_u = uni.size();
        best_j = j;
      }
    }
    const bool hit = best_j < g.size() && best_i * 100 > static_cast<std::size_t>(k) * best_u && !taken[best_j];
    if (hit) {
      taken[best_j] = true;
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), false));
  return c;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t T, int C) {
  std::vector<int> out(T);
  int cur = static_cast<int>(rng.index(static_cast<std::size_t>(C)));
  for (auto& v : out) {
    if (rng.uniform() < 0.3) cur = static_cast<int>(rng.index(static_cast<std::size_t>(C)));
    v = cur;
  }
  return out;
}

}  // namespace sstda::testing
