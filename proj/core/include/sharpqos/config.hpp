#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sharpqos/featinit.hpp"
#include "sharpqos/model.hpp"
#include "sharpqos/qosdata.hpp"
#include "sharpqos/trainloop.hpp"

namespace sharpqos {

struct DatasetConfig {
  std::vector<std::string> matrix_paths;
  std::vector<std::string> task_names;
  std::string context_path;
  std::string archive;  // normalized archive directory, alternative to raw files
};

struct EvalConfig {
  int groups = 50;
  std::vector<int> levels = {90, 95, 99};
  double outlier_fraction = 0.0;
  std::string cold_start;  // "CU|CS|CB:<pct>" or empty
  std::string output_dir = "out";
  bool strict = true;
};

/// Everything one experiment needs; defaults follow the reference
/// configuration of the method.
struct ExperimentConfig {
  DatasetConfig dataset;
  SplitSpec split;
  FeatureConfig features;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t master_seed = 0;

  /// Parses the TOML-style config; relative paths resolve against the file's
  /// directory.
  static ExperimentConfig from_file(const std::string& path);

  /// Derives all stage seeds from one master seed.
  void apply_master_seed(std::uint64_t seed);

  std::string canonical() const;
  std::string hash() const;  // FNV-1a 64 over canonical(), hex
};

/// Minimal TOML subset: [sections], key = value with numbers, booleans,
/// quoted strings and flat arrays; '#' comments.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  double number(const std::string& section, const std::string& key, double fallback) const;
  long integer(const std::string& section, const std::string& key, long fallback) const;
  bool boolean(const std::string& section, const std::string& key, bool fallback) const;
  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  std::vector<std::string> str_list(const std::string& section, const std::string& key) const;
  std::vector<double> num_list(const std::string& section, const std::string& key) const;

 private:
  struct Value {
    std::string raw;
    bool is_string = false;
    std::vector<std::string> list;
    bool is_list = false;
  };
  std::map<std::string, std::map<std::string, Value>> sections_;
  const Value* lookup(const std::string& section, const std::string& key) const;
};

}  // namespace sharpqos
