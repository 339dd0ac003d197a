#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sharpqos/sparse.hpp"

namespace sharpqos {

/// Row-major n*m boolean mask over one task's user x service grid.
using Mask = std::vector<std::uint8_t>;

/// The two public context attributes carried by every entity.
enum class ContextAttr { Region, As };

/// P partially observed user x service QoS matrices plus the public context
/// attributes (region, autonomous system) of every user and service. Raw zero
/// and -1 sentinels are normalized away at load time: `values` holds the
/// observed magnitudes and `observed` the masks (value > 0 iff observed).
struct QoSDataset {
  int n = 0;
  int m = 0;
  int P = 0;
  std::vector<Eigen::MatrixXd> values;
  std::vector<Mask> observed;
  std::vector<int> user_region, user_as;
  std::vector<int> service_region, service_as;
  std::vector<std::string> region_vocab, as_vocab;  // shared across entity kinds
  std::vector<std::string> task_names;
  std::vector<std::string> warnings;

  int nodes() const { return n + m; }
  std::size_t observed_count(int task) const;
  void validate() const;
};

struct SplitSpec {
  double train_density = 10.0;  // percent
  std::uint64_t seed = 0;
  double val_fraction = 0.05;
};

enum class ColdStartKind { CU, CS, CB };

struct ColdStartSpec {
  ColdStartKind kind = ColdStartKind::CU;
  double csp = 0.0;  // percent of entities removed
  std::uint64_t seed = 0;
};

ColdStartKind parse_cold_start_kind(const std::string& s);
std::string to_string(ColdStartKind k);

struct DataSplit {
  std::vector<Mask> train, val, test;
};

QoSDataset load_dataset(const std::vector<std::string>& matrix_paths,
                        const std::string& context_path,
                        const std::vector<std::string>& task_names);

/// Per-task independent sampling of observed entries: |train u val| =
/// round(TD% * |observed|), the rest is test. Deterministic in spec.seed.
DataSplit split(const QoSDataset& ds, const SplitSpec& spec);

/// Clears every train entry of the selected users (CU), services (CS) or both
/// (CB) in all tasks. floor(csp% * count) entities are drawn uniformly without
/// replacement; the user stream is independent of the service stream, so CU
/// and CB select the same users for the same seed.
std::vector<Mask> make_cold_start(const QoSDataset& ds, const std::vector<Mask>& train,
                                  const ColdStartSpec& spec);

/// Removes the `fraction` percent of test entries with the highest
/// isolation-forest anomaly score, per task, scored on the raw QoS value.
std::vector<Mask> filter_outliers(const QoSDataset& ds, const std::vector<Mask>& test,
                                  double fraction, std::uint64_t seed = 0);

/// Observed (row, col, value) list for the masked entries of one task,
/// row-major order.
std::vector<Triplet> mask_triplets(const QoSDataset& ds, const Mask& mask, int task);
std::size_t mask_count(const Mask& mask);

// Normalized dataset archive: meta.json + values_<task>.csv per task +
// context.tsv.
void save_archive(const QoSDataset& ds, const std::string& dir, const std::string& provenance);
QoSDataset load_archive(const std::string& dir);

}  // namespace sharpqos
