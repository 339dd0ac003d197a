#pragma once

#include <cstdint>
#include <vector>

namespace sharpqos {

/// Isolation forest over scalar observations. Defaults follow the canonical
/// method: 100 trees, subsample min(256, n), depth cap ceil(log2(subsample)),
/// anomaly score 2^(-E[path]/c(subsample)).
struct IsoForestConfig {
  int trees = 100;
  int max_subsample = 256;
  std::uint64_t seed = 0;
};

/// Average unsuccessful-search path length c(n) of a BST with n nodes.
double average_path_length(int n);

/// Anomaly score in (0, 1) per value; higher means more isolated.
std::vector<double> isolation_scores(const std::vector<double>& values, const IsoForestConfig& cfg);

}  // namespace sharpqos
