#pragma once

#include <string>
#include <vector>

#include "sharpqos/qosdata.hpp"
#include "sharpqos/sparse.hpp"

namespace sharpqos {

/// Guarded degree for isolated nodes in the symmetric normalizations.
inline constexpr double kDegreeEps = 1.0;

/// Bipartite invocation adjacency over N = n + m nodes (users first), with an
/// edge (i, n+j) iff the train mask holds entry (i, j). 0/1 weights, symmetric.
SparseAdj build_invocation_graph(const QoSDataset& ds, const Mask& train_mask, int task);

/// Edges between all pairs of entities (users and services alike) sharing the
/// same region or AS id. No self-loops; symmetric.
SparseAdj build_context_graph(const QoSDataset& ds, ContextAttr attr);

/// D^{-1/2} (A + I) D^{-1/2} with D_jj = sum_k A_jk and zero degrees guarded
/// by max(D_jj, kDegreeEps).
SparseAdj normalize_adjacency(const SparseAdj& a);

/// Second-hop co-invocation operators from the n x m incidence of the train
/// mask:
///   user:    Du^{-1/2} H Ds^{-1} H^T Du^{-1/2}   (n x n)
///   service: Ds^{-1/2} H^T Du^{-1} H Ds^{-1/2}   (m x m)
/// Zero degrees guarded by kDegreeEps; outputs are symmetrized.
struct Hypergraphs {
  SparseAdj user;
  SparseAdj service;
};
Hypergraphs build_hypergraphs(const QoSDataset& ds, const Mask& train_mask, int task);

/// All propagation structures for one split: P normalized invocation graphs
/// and 2P hypergraph operators, plus the two normalized context graphs.
struct GraphSet {
  std::vector<SparseAdj> qos;           // P, each N x N
  SparseAdj region;                     // N x N
  SparseAdj as_graph;                   // N x N
  std::vector<SparseAdj> hyper_user;    // P, each n x n
  std::vector<SparseAdj> hyper_service; // P, each m x m
};

GraphSet build_graph_set(const QoSDataset& ds, const std::vector<Mask>& train_masks);

/// Debug dump: one edges_<name>.csv per graph in `dir`.
void dump_graph_set(const GraphSet& gs, const QoSDataset& ds, const std::string& dir);

}  // namespace sharpqos
