#include "sharpqos/qosdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "sharpqos/isoforest.hpp"
#include "sharpqos/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace sharpqos {

std::size_t QoSDataset::observed_count(int task) const { return mask_count(observed[task]); }

void QoSDataset::validate() const {
  if (P != static_cast<int>(values.size()) || P != static_cast<int>(observed.size()) ||
      P != static_cast<int>(task_names.size()))
    throw std::invalid_argument("QoSDataset: task count mismatch");
  for (int p = 0; p < P; ++p) {
    if (values[p].rows() != n || values[p].cols() != m)
      throw std::invalid_argument("QoSDataset: matrix shape mismatch across tasks");
    if (observed[p].size() != static_cast<std::size_t>(n) * m)
      throw std::invalid_argument("QoSDataset: mask size mismatch");
  }
  if (static_cast<int>(user_region.size()) != n || static_cast<int>(user_as.size()) != n ||
      static_cast<int>(service_region.size()) != m || static_cast<int>(service_as.size()) != m)
    throw std::invalid_argument("QoSDataset: context attribute count mismatch");
}

ColdStartKind parse_cold_start_kind(const std::string& s) {
  if (s == "CU" || s == "cu") return ColdStartKind::CU;
  if (s == "CS" || s == "cs") return ColdStartKind::CS;
  if (s == "CB" || s == "cb") return ColdStartKind::CB;
  throw std::invalid_argument("unknown cold-start kind: " + s);
}

std::string to_string(ColdStartKind k) {
  switch (k) {
    case ColdStartKind::CU: return "CU";
    case ColdStartKind::CS: return "CS";
    default: return "CB";
  }
}

std::size_t mask_count(const Mask& mask) {
  std::size_t c = 0;
  for (std::uint8_t b : mask) c += b != 0;
  return c;
}

std::vector<Triplet> mask_triplets(const QoSDataset& ds, const Mask& mask, int task) {
  std::vector<Triplet> out;
  for (int i = 0; i < ds.n; ++i)
    for (int j = 0; j < ds.m; ++j)
      if (mask[static_cast<std::size_t>(i) * ds.m + j])
        out.push_back({i, j, ds.values[task](i, j)});
  return out;
}

namespace {

Eigen::MatrixXd read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matrix file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof() && ss.fail()) throw std::runtime_error("non-numeric token in " + path);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty matrix file: " + path);
  const std::size_t m = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != m) throw std::runtime_error("ragged rows in matrix file: " + path);
  Eigen::MatrixXd mat(rows.size(), m);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < m; ++j) mat(i, j) = rows[i][j];
  return mat;
}

struct ContextRow {
  std::string kind;
  int index;
  std::string region;
  std::string as;
};

std::vector<ContextRow> read_context_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open context file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty context file: " + path);
  std::vector<ContextRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ContextRow r;
    std::string idx;
    if (!std::getline(ss, r.kind, '\t') || !std::getline(ss, idx, '\t') ||
        !std::getline(ss, r.region, '\t') || !std::getline(ss, r.as))
      throw std::runtime_error("malformed context row: " + line);
    r.index = std::stoi(idx);
    rows.push_back(std::move(r));
  }
  return rows;
}

int vocab_id(std::vector<std::string>& vocab, std::map<std::string, int>& lookup,
             const std::string& token) {
  auto it = lookup.find(token);
  if (it != lookup.end()) return it->second;
  int id = static_cast<int>(vocab.size());
  vocab.push_back(token);
  lookup.emplace(token, id);
  return id;
}

void apply_context(QoSDataset& ds, const std::vector<ContextRow>& rows) {
  ds.user_region.assign(ds.n, -1);
  ds.user_as.assign(ds.n, -1);
  ds.service_region.assign(ds.m, -1);
  ds.service_as.assign(ds.m, -1);
  // sorted token -> id so ids are independent of row order
  std::vector<std::string> rtok, atok;
  for (const auto& r : rows) {
    rtok.push_back(r.region);
    atok.push_back(r.as);
  }
  std::sort(rtok.begin(), rtok.end());
  rtok.erase(std::unique(rtok.begin(), rtok.end()), rtok.end());
  std::sort(atok.begin(), atok.end());
  atok.erase(std::unique(atok.begin(), atok.end()), atok.end());
  ds.region_vocab = rtok;
  ds.as_vocab = atok;
  std::map<std::string, int> rl, al;
  for (std::size_t i = 0; i < rtok.size(); ++i) rl[rtok[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < atok.size(); ++i) al[atok[i]] = static_cast<int>(i);

  for (const auto& r : rows) {
    int rid = rl.at(r.region);
    int aid = al.at(r.as);
    if (r.kind == "user") {
      if (r.index < 0 || r.index >= ds.n)
        throw std::runtime_error("context user index out of range: " + std::to_string(r.index));
      if (ds.user_region[r.index] != -1)
        throw std::runtime_error("duplicate context row for user " + std::to_string(r.index));
      ds.user_region[r.index] = rid;
      ds.user_as[r.index] = aid;
    } else if (r.kind == "service") {
      if (r.index < 0 || r.index >= ds.m)
        throw std::runtime_error("context service index out of range: " + std::to_string(r.index));
      if (ds.service_region[r.index] != -1)
        throw std::runtime_error("duplicate context row for service " + std::to_string(r.index));
      ds.service_region[r.index] = rid;
      ds.service_as[r.index] = aid;
    } else {
      throw std::runtime_error("unknown entity_kind: " + r.kind);
    }
  }
  for (int i = 0; i < ds.n; ++i)
    if (ds.user_region[i] == -1)
      throw std::runtime_error("missing context row for user " + std::to_string(i));
  for (int j = 0; j < ds.m; ++j)
    if (ds.service_region[j] == -1)
      throw std::runtime_error("missing context row for service " + std::to_string(j));
}

}  // namespace

QoSDataset load_dataset(const std::vector<std::string>& matrix_paths,
                        const std::string& context_path,
                        const std::vector<std::string>& task_names) {
  if (matrix_paths.empty()) throw std::invalid_argument("load_dataset: no matrix files");
  if (matrix_paths.size() != task_names.size())
    throw std::invalid_argument("load_dataset: one task name per matrix file required");

  QoSDataset ds;
  ds.P = static_cast<int>(matrix_paths.size());
  ds.task_names = task_names;
  for (int p = 0; p < ds.P; ++p) {
    Eigen::MatrixXd raw = read_matrix_file(matrix_paths[p]);
    if (p == 0) {
      ds.n = static_cast<int>(raw.rows());
      ds.m = static_cast<int>(raw.cols());
    } else if (raw.rows() != ds.n || raw.cols() != ds.m) {
      throw std::runtime_error("matrix shape mismatch across tasks: " + matrix_paths[p]);
    }
    Mask mask(static_cast<std::size_t>(ds.n) * ds.m, 0);
    Eigen::MatrixXd vals = Eigen::MatrixXd::Zero(ds.n, ds.m);
    std::size_t observed = 0;
    for (int i = 0; i < ds.n; ++i) {
      for (int j = 0; j < ds.m; ++j) {
        double v = raw(i, j);
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in " + matrix_paths[p]);
        if (v > 0.0) {
          vals(i, j) = v;
          mask[static_cast<std::size_t>(i) * ds.m + j] = 1;
          ++observed;
        } else if (v != 0.0 && v != -1.0) {
          throw std::runtime_error("negative value other than -1 in " + matrix_paths[p]);
        }
      }
    }
    if (observed == 0) {
      std::string w = "task " + task_names[p] + " has no observed entries";
      ds.warnings.push_back(w);
      std::cerr << "[warn] " << w << '\n';
    }
    ds.values.push_back(std::move(vals));
    ds.observed.push_back(std::move(mask));
  }
  apply_context(ds, read_context_tsv(context_path));
  ds.validate();
  return ds;
}

DataSplit split(const QoSDataset& ds, const SplitSpec& spec) {
  if (!(spec.train_density > 0.0 && spec.train_density < 100.0))
    throw std::invalid_argument("split: train_density must be in (0, 100)");
  if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0))
    throw std::invalid_argument("split: val_fraction must be in [0, 1)");

  DataSplit out;
  const std::size_t total = static_cast<std::size_t>(ds.n) * ds.m;
  for (int p = 0; p < ds.P; ++p) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < total; ++k)
      if (ds.observed[p][k]) idx.push_back(k);
    const auto M = static_cast<long long>(idx.size());
    long long k_train_val = std::llround(spec.train_density / 100.0 * static_cast<double>(M));
    if (k_train_val <= 0)
      throw std::runtime_error("split: TD=" + std::to_string(spec.train_density) + "% of " +
                               std::to_string(M) + " observed entries in task " + ds.task_names[p] +
                               " rounds to zero training entries");
    long long k_val = std::llround(spec.val_fraction * static_cast<double>(k_train_val));

    Rng rng(mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(p)));
    rng.shuffle(idx);

    Mask train(total, 0), val(total, 0), test(total, 0);
    for (long long k = 0; k < M; ++k) {
      if (k < k_train_val - k_val)
        train[idx[k]] = 1;
      else if (k < k_train_val)
        val[idx[k]] = 1;
      else
        test[idx[k]] = 1;
    }
    out.train.push_back(std::move(train));
    out.val.push_back(std::move(val));
    out.test.push_back(std::move(test));
  }
  return out;
}

std::vector<Mask> make_cold_start(const QoSDataset& ds, const std::vector<Mask>& train,
                                  const ColdStartSpec& spec) {
  if (spec.csp < 0.0 || spec.csp > 100.0)
    throw std::invalid_argument("make_cold_start: csp must be in [0, 100]");
  std::vector<Mask> out = train;
  if (spec.csp == 0.0) return out;

  std::vector<int> users, services;
  if (spec.kind == ColdStartKind::CU || spec.kind == ColdStartKind::CB) {
    int cnt = static_cast<int>(std::floor(spec.csp / 100.0 * ds.n));
    Rng rng(mix_seed(spec.seed, 2100));
    users = rng.sample_without_replacement(ds.n, cnt);
  }
  if (spec.kind == ColdStartKind::CS || spec.kind == ColdStartKind::CB) {
    int cnt = static_cast<int>(std::floor(spec.csp / 100.0 * ds.m));
    Rng rng(mix_seed(spec.seed, 2200));
    services = rng.sample_without_replacement(ds.m, cnt);
  }

  for (int p = 0; p < ds.P; ++p) {
    for (int u : users)
      for (int j = 0; j < ds.m; ++j) out[p][static_cast<std::size_t>(u) * ds.m + j] = 0;
    for (int s : services)
      for (int i = 0; i < ds.n; ++i) out[p][static_cast<std::size_t>(i) * ds.m + s] = 0;
  }
  return out;
}

std::vector<Mask> filter_outliers(const QoSDataset& ds, const std::vector<Mask>& test,
                                  double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 100.0)
    throw std::invalid_argument("filter_outliers: fraction must be in [0, 100]");
  std::vector<Mask> out = test;
  if (fraction == 0.0) return out;

  for (int p = 0; p < ds.P; ++p) {
    std::vector<Triplet> entries = mask_triplets(ds, test[p], p);
    if (entries.empty()) continue;
    std::vector<double> values(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) values[i] = entries[i].value;
    IsoForestConfig cfg;
    cfg.seed = mix_seed(seed, 3000 + static_cast<std::uint64_t>(p));
    std::vector<double> scores = isolation_scores(values, cfg);

    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    auto k = static_cast<std::size_t>(
        std::llround(fraction / 100.0 * static_cast<double>(entries.size())));
    for (std::size_t i = 0; i < k && i < order.size(); ++i) {
      const Triplet& e = entries[order[i]];
      out[p][static_cast<std::size_t>(e.row) * ds.m + e.col] = 0;
    }
  }
  return out;
}

void save_archive(const QoSDataset& ds, const std::string& dir, const std::string& provenance) {
  fs::create_directories(dir);
  json meta;
  meta["n"] = ds.n;
  meta["m"] = ds.m;
  meta["P"] = ds.P;
  meta["task_names"] = ds.task_names;
  meta["provenance"] = provenance;
  std::ofstream mf(fs::path(dir) / "meta.json");
  mf << meta.dump(2) << '\n';

  for (int p = 0; p < ds.P; ++p) {
    std::ofstream vf(fs::path(dir) / ("values_" + ds.task_names[p] + ".csv"));
    vf << "row,col,value\n";
    vf.precision(17);
    for (int i = 0; i < ds.n; ++i)
      for (int j = 0; j < ds.m; ++j)
        if (ds.observed[p][static_cast<std::size_t>(i) * ds.m + j])
          vf << i << ',' << j << ',' << ds.values[p](i, j) << '\n';
  }

  std::ofstream cf(fs::path(dir) / "context.tsv");
  cf << "kind\tindex\tregion\tas\n";
  for (int i = 0; i < ds.n; ++i)
    cf << "user\t" << i << '\t' << ds.region_vocab[ds.user_region[i]] << '\t'
       << ds.as_vocab[ds.user_as[i]] << '\n';
  for (int j = 0; j < ds.m; ++j)
    cf << "service\t" << j << '\t' << ds.region_vocab[ds.service_region[j]] << '\t'
       << ds.as_vocab[ds.service_as[j]] << '\n';
}

QoSDataset load_archive(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw std::runtime_error("cannot open archive meta.json in " + dir);
  json meta = json::parse(mf);

  QoSDataset ds;
  ds.n = meta.at("n").get<int>();
  ds.m = meta.at("m").get<int>();
  ds.P = meta.at("P").get<int>();
  ds.task_names = meta.at("task_names").get<std::vector<std::string>>();

  for (int p = 0; p < ds.P; ++p) {
    std::ifstream vf(fs::path(dir) / ("values_" + ds.task_names[p] + ".csv"));
    if (!vf) throw std::runtime_error("missing values csv for task " + ds.task_names[p]);
    std::string line;
    std::getline(vf, line);  // header
    Eigen::MatrixXd vals = Eigen::MatrixXd::Zero(ds.n, ds.m);
    Mask mask(static_cast<std::size_t>(ds.n) * ds.m, 0);
    std::size_t observed = 0;
    while (std::getline(vf, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string a, b, c;
      std::getline(ss, a, ',');
      std::getline(ss, b, ',');
      std::getline(ss, c);
      int i = std::stoi(a), j = std::stoi(b);
      double v = std::stod(c);
      if (v <= 0.0) throw std::runtime_error("archive value must be positive");
      vals(i, j) = v;
      mask[static_cast<std::size_t>(i) * ds.m + j] = 1;
      ++observed;
    }
    if (observed == 0) ds.warnings.push_back("task " + ds.task_names[p] + " has no observed entries");
    ds.values.push_back(std::move(vals));
    ds.observed.push_back(std::move(mask));
  }
  apply_context(ds, read_context_tsv((fs::path(dir) / "context.tsv").string()));
  ds.validate();
  return ds;
}

}  // namespace sharpqos
