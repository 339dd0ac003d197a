#include "sharpqos/isoforest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sharpqos/rng.hpp"

namespace sharpqos {

double average_path_length(int n) {
  if (n <= 1) return 0.0;
  double h = std::log(static_cast<double>(n - 1)) + 0.5772156649015329;
  return 2.0 * h - 2.0 * static_cast<double>(n - 1) / static_cast<double>(n);
}

namespace {

// A leaf covers the decision region [lo, hi) carved out by the split values
// above it; every query value in the region receives `path` as its length.
struct Leaf {
  double lo;
  double hi;
  double path;
};

// Scalar isolation tree: split value drawn uniformly on [min, max] of the
// node's sample; v < split goes left. Region bounds come from split values so
// out-of-sample queries are routed exactly like the classic algorithm.
void grow(std::vector<double>& sample, double region_lo, double region_hi, int depth,
          int max_depth, Rng& rng, std::vector<Leaf>& leaves) {
  double lo = sample.front(), hi = sample.back();
  if (static_cast<int>(sample.size()) <= 1 || hi - lo <= 0.0 || depth >= max_depth) {
    leaves.push_back({region_lo, region_hi, depth + average_path_length(static_cast<int>(sample.size()))});
    return;
  }
  double split = rng.uniform(lo, hi);
  std::vector<double> left, right;
  for (double v : sample) (v < split ? left : right).push_back(v);
  if (left.empty() || right.empty()) {
    leaves.push_back({region_lo, region_hi, depth + average_path_length(static_cast<int>(sample.size()))});
    return;
  }
  grow(left, region_lo, split, depth + 1, max_depth, rng, leaves);
  grow(right, split, region_hi, depth + 1, max_depth, rng, leaves);
}

}  // namespace

std::vector<double> isolation_scores(const std::vector<double>& values,
                                     const IsoForestConfig& cfg) {
  const int n = static_cast<int>(values.size());
  if (n == 0) return {};
  const int psi = std::min(cfg.max_subsample, n);
  const int max_depth = static_cast<int>(std::ceil(std::log2(std::max(2, psi))));
  const double norm = std::max(average_path_length(psi), 1e-12);
  const double inf = std::numeric_limits<double>::infinity();

  Rng rng(cfg.seed);
  std::vector<double> path_sum(values.size(), 0.0);

  std::vector<Leaf> leaves;
  for (int tree = 0; tree < cfg.trees; ++tree) {
    std::vector<int> pick = rng.sample_without_replacement(n, psi);
    std::vector<double> sample(pick.size());
    for (std::size_t i = 0; i < pick.size(); ++i) sample[i] = values[pick[i]];
    std::sort(sample.begin(), sample.end());

    leaves.clear();
    grow(sample, -inf, inf, 0, max_depth, rng, leaves);
    std::sort(leaves.begin(), leaves.end(),
              [](const Leaf& a, const Leaf& b) { return a.lo < b.lo; });

    for (std::size_t i = 0; i < values.size(); ++i) {
      // rightmost leaf with lo <= v; regions partition the line
      auto it = std::upper_bound(leaves.begin(), leaves.end(), values[i],
                                 [](double v, const Leaf& l) { return v < l.lo; });
      path_sum[i] += std::prev(it)->path;
    }
  }

  std::vector<double> scores(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    scores[i] = std::pow(2.0, -(path_sum[i] / cfg.trees) / norm);
  return scores;
}

}  // namespace sharpqos
