#include "sharpqos/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>

namespace sharpqos {

SparseAdj build_invocation_graph(const QoSDataset& ds, const Mask& train_mask, int task) {
  (void)task;
  const int N = ds.nodes();
  std::vector<Triplet> entries;
  for (int i = 0; i < ds.n; ++i) {
    for (int j = 0; j < ds.m; ++j) {
      if (train_mask[static_cast<std::size_t>(i) * ds.m + j]) {
        entries.push_back({i, ds.n + j, 1.0});
        entries.push_back({ds.n + j, i, 1.0});
      }
    }
  }
  return SparseAdj(N, N, std::move(entries), true);
}

SparseAdj build_context_graph(const QoSDataset& ds, ContextAttr attr) {
  const int N = ds.nodes();
  // group node indices by shared attribute value, users and services together
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < ds.n; ++i)
    groups[attr == ContextAttr::Region ? ds.user_region[i] : ds.user_as[i]].push_back(i);
  for (int j = 0; j < ds.m; ++j)
    groups[attr == ContextAttr::Region ? ds.service_region[j] : ds.service_as[j]].push_back(ds.n + j);

  std::vector<Triplet> entries;
  for (const auto& [value, members] : groups) {
    (void)value;
    for (int a : members)
      for (int b : members)
        if (a != b) entries.push_back({a, b, 1.0});
  }
  return SparseAdj(N, N, std::move(entries), true);
}

SparseAdj normalize_adjacency(const SparseAdj& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("normalize_adjacency: non-square input");
  const int N = a.rows();
  Eigen::VectorXd deg = a.row_sums();
  Eigen::VectorXd inv_sqrt(N);
  for (int i = 0; i < N; ++i) inv_sqrt(i) = 1.0 / std::sqrt(std::max(deg(i), kDegreeEps));

  std::vector<Triplet> entries;
  entries.reserve(a.nnz() + static_cast<std::size_t>(N));
  std::vector<char> has_diag(static_cast<std::size_t>(N), 0);
  for (const Triplet& t : a.entries()) {
    double w = t.value;
    if (t.row == t.col) {
      w += 1.0;  // the +I self-loop
      has_diag[static_cast<std::size_t>(t.row)] = 1;
    }
    entries.push_back({t.row, t.col, w * inv_sqrt(t.row) * inv_sqrt(t.col)});
  }
  for (int i = 0; i < N; ++i)
    if (!has_diag[static_cast<std::size_t>(i)])
      entries.push_back({i, i, inv_sqrt(i) * inv_sqrt(i)});
  return SparseAdj(N, N, std::move(entries), a.symmetric());
}

Hypergraphs build_hypergraphs(const QoSDataset& ds, const Mask& train_mask, int task) {
  (void)task;
  std::vector<Triplet> h_entries;
  Eigen::VectorXd deg_u = Eigen::VectorXd::Zero(ds.n);
  Eigen::VectorXd deg_s = Eigen::VectorXd::Zero(ds.m);
  for (int i = 0; i < ds.n; ++i) {
    for (int j = 0; j < ds.m; ++j) {
      if (train_mask[static_cast<std::size_t>(i) * ds.m + j]) {
        h_entries.push_back({i, j, 1.0});
        deg_u(i) += 1.0;
        deg_s(j) += 1.0;
      }
    }
  }
  CsrMatrix h = CsrMatrix::from_triplets(ds.n, ds.m, h_entries);
  CsrMatrix ht = h.transposed();

  Eigen::VectorXd du_is(ds.n), ds_inv(ds.m), ds_is(ds.m), du_inv(ds.n);
  for (int i = 0; i < ds.n; ++i) {
    double d = std::max(deg_u(i), kDegreeEps);
    du_is(i) = 1.0 / std::sqrt(d);
    du_inv(i) = 1.0 / d;
  }
  for (int j = 0; j < ds.m; ++j) {
    double d = std::max(deg_s(j), kDegreeEps);
    ds_is(j) = 1.0 / std::sqrt(d);
    ds_inv(j) = 1.0 / d;
  }

  // user side: Du^{-1/2} H Ds^{-1} H^T Du^{-1/2}
  CsrMatrix core_u = h.multiply_scaled(ds_inv, ht);
  std::vector<Triplet> user_entries;
  for (Triplet t : core_u.to_triplets()) {
    t.value *= du_is(t.row) * du_is(t.col);
    user_entries.push_back(t);
  }
  // service side: Ds^{-1/2} H^T Du^{-1} H Ds^{-1/2}
  CsrMatrix core_s = ht.multiply_scaled(du_inv, h);
  std::vector<Triplet> service_entries;
  for (Triplet t : core_s.to_triplets()) {
    t.value *= ds_is(t.row) * ds_is(t.col);
    service_entries.push_back(t);
  }

  // kill float asymmetry from the sparse products: average (i,j) with (j,i)
  auto symmetrize = [](const std::vector<Triplet>& entries) {
    std::map<std::pair<int, int>, double> acc;
    for (const Triplet& t : entries) {
      auto key = std::minmax(t.row, t.col);
      acc[{key.first, key.second}] += t.row == t.col ? t.value : 0.5 * t.value;
    }
    std::vector<Triplet> out;
    for (const auto& [key, v] : acc) {
      out.push_back({key.first, key.second, v});
      if (key.first != key.second) out.push_back({key.second, key.first, v});
    }
    return out;
  };

  std::vector<Triplet> ue = symmetrize(user_entries);
  std::vector<Triplet> se = symmetrize(service_entries);
  return Hypergraphs{SparseAdj(ds.n, ds.n, std::move(ue), true),
                     SparseAdj(ds.m, ds.m, std::move(se), true)};
}

GraphSet build_graph_set(const QoSDataset& ds, const std::vector<Mask>& train_masks) {
  GraphSet gs;
  for (int p = 0; p < ds.P; ++p) {
    gs.qos.push_back(normalize_adjacency(build_invocation_graph(ds, train_masks[p], p)));
    Hypergraphs hg = build_hypergraphs(ds, train_masks[p], p);
    gs.hyper_user.push_back(std::move(hg.user));
    gs.hyper_service.push_back(std::move(hg.service));
  }
  gs.region = normalize_adjacency(build_context_graph(ds, ContextAttr::Region));
  gs.as_graph = normalize_adjacency(build_context_graph(ds, ContextAttr::As));
  return gs;
}

void dump_graph_set(const GraphSet& gs, const QoSDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int p = 0; p < ds.P; ++p) {
    gs.qos[p].dump_csv((fs::path(dir) / ("edges_qos_" + ds.task_names[p] + ".csv")).string());
    gs.hyper_user[p].dump_csv(
        (fs::path(dir) / ("edges_hyper_user_" + ds.task_names[p] + ".csv")).string());
    gs.hyper_service[p].dump_csv(
        (fs::path(dir) / ("edges_hyper_service_" + ds.task_names[p] + ".csv")).string());
  }
  gs.region.dump_csv((fs::path(dir) / "edges_region.csv").string());
  gs.as_graph.dump_csv((fs::path(dir) / "edges_as.csv").string());
}

}  // namespace sharpqos
