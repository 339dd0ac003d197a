#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace sharpqos {

struct Triplet {
  int row;
  int col;
  double value;
};

/// Sparse adjacency in canonical coordinate form: entries sorted by (row, col),
/// no duplicates, finite non-negative weights.
class SparseAdj {
 public:
  SparseAdj() = default;
  SparseAdj(int n_rows, int n_cols, std::vector<Triplet> entries, bool symmetric);

  int rows() const { return n_rows_; }
  int cols() const { return n_cols_; }
  bool symmetric() const { return symmetric_; }
  std::size_t nnz() const { return entries_.size(); }
  const std::vector<Triplet>& entries() const { return entries_; }

  Eigen::MatrixXd dense() const;

  /// Row sums (the degree vector when the matrix is an adjacency).
  Eigen::VectorXd row_sums() const;

  /// CSV dump, one `row,col,weight` line per entry.
  void dump_csv(const std::string& path) const;

 private:
  int n_rows_ = 0;
  int n_cols_ = 0;
  bool symmetric_ = false;
  std::vector<Triplet> entries_;
};

/// Compressed-row matrix used for the propagation products. Multiplication is
/// sequential with a fixed reduction order so results are bit-reproducible.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  static CsrMatrix from_adj(const SparseAdj& adj);
  static CsrMatrix from_triplets(int n_rows, int n_cols, const std::vector<Triplet>& entries);

  int rows() const { return n_rows_; }
  int cols() const { return n_cols_; }
  std::size_t nnz() const { return values_.size(); }

  Eigen::MatrixXd multiply(const Eigen::MatrixXd& dense) const;
  CsrMatrix transposed() const;

  /// this * diag(d) * other, all sparse; used for the hypergraph products.
  CsrMatrix multiply_scaled(const Eigen::VectorXd& diag, const CsrMatrix& other) const;

  std::vector<Triplet> to_triplets() const;

  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

 private:
  int n_rows_ = 0;
  int n_cols_ = 0;
  std::vector<int> row_ptr_;
  std::vector<int> col_idx_;
  std::vector<double> values_;
};

}  // namespace sharpqos
