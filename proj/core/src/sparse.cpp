#include "sharpqos/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace sharpqos {

SparseAdj::SparseAdj(int n_rows, int n_cols, std::vector<Triplet> entries, bool symmetric)
    : n_rows_(n_rows), n_cols_(n_cols), symmetric_(symmetric), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Triplet& t = entries_[i];
    if (t.row < 0 || t.row >= n_rows_ || t.col < 0 || t.col >= n_cols_)
      throw std::invalid_argument("SparseAdj: entry out of bounds");
    if (!std::isfinite(t.value) || t.value < 0.0)
      throw std::invalid_argument("SparseAdj: weights must be finite and non-negative");
    if (i > 0 && entries_[i - 1].row == t.row && entries_[i - 1].col == t.col)
      throw std::invalid_argument("SparseAdj: duplicate entry");
  }
}

Eigen::MatrixXd SparseAdj::dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_rows_, n_cols_);
  for (const Triplet& t : entries_) out(t.row, t.col) = t.value;
  return out;
}

Eigen::VectorXd SparseAdj::row_sums() const {
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(n_rows_);
  for (const Triplet& t : entries_) sums(t.row) += t.value;
  return sums;
}

void SparseAdj::dump_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "row,col,weight\n";
  out.precision(17);
  for (const Triplet& t : entries_) out << t.row << ',' << t.col << ',' << t.value << '\n';
}

CsrMatrix CsrMatrix::from_adj(const SparseAdj& adj) {
  return from_triplets(adj.rows(), adj.cols(), adj.entries());
}

CsrMatrix CsrMatrix::from_triplets(int n_rows, int n_cols, const std::vector<Triplet>& entries) {
  std::vector<Triplet> sorted = entries;
  std::sort(sorted.begin(), sorted.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  CsrMatrix m;
  m.n_rows_ = n_rows;
  m.n_cols_ = n_cols;
  m.row_ptr_.assign(static_cast<std::size_t>(n_rows) + 1, 0);
  m.col_idx_.reserve(sorted.size());
  m.values_.reserve(sorted.size());
  for (const Triplet& t : sorted) {
    m.row_ptr_[static_cast<std::size_t>(t.row) + 1]++;
    m.col_idx_.push_back(t.col);
    m.values_.push_back(t.value);
  }
  for (int r = 0; r < n_rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

Eigen::MatrixXd CsrMatrix::multiply(const Eigen::MatrixXd& dense) const {
  if (dense.rows() != n_cols_) throw std::invalid_argument("CsrMatrix::multiply: shape mismatch");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_rows_, dense.cols());
  for (int r = 0; r < n_rows_; ++r) {
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      out.row(r) += values_[k] * dense.row(col_idx_[k]);
  }
  return out;
}

CsrMatrix CsrMatrix::transposed() const {
  std::vector<Triplet> t;
  t.reserve(values_.size());
  for (int r = 0; r < n_rows_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      t.push_back({col_idx_[k], r, values_[k]});
  return from_triplets(n_cols_, n_rows_, t);
}

CsrMatrix CsrMatrix::multiply_scaled(const Eigen::VectorXd& diag, const CsrMatrix& other) const {
  if (n_cols_ != diag.size() || n_cols_ != other.n_rows_)
    throw std::invalid_argument("CsrMatrix::multiply_scaled: shape mismatch");
  // row-by-row sparse accumulation with a dense scratch vector
  std::vector<Triplet> result;
  std::vector<double> scratch(static_cast<std::size_t>(other.n_cols_), 0.0);
  std::vector<char> seen(static_cast<std::size_t>(other.n_cols_), 0);
  std::vector<int> touched;
  for (int r = 0; r < n_rows_; ++r) {
    touched.clear();
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      int mid = col_idx_[k];
      double scale = values_[k] * diag(mid);
      for (int k2 = other.row_ptr_[mid]; k2 < other.row_ptr_[mid + 1]; ++k2) {
        int c = other.col_idx_[k2];
        if (!seen[c]) {
          seen[c] = 1;
          touched.push_back(c);
        }
        scratch[c] += scale * other.values_[k2];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (int c : touched) {
      if (scratch[c] != 0.0) result.push_back({r, c, scratch[c]});
      scratch[c] = 0.0;
      seen[c] = 0;
    }
  }
  return from_triplets(n_rows_, other.n_cols_, result);
}

std::vector<Triplet> CsrMatrix::to_triplets() const {
  std::vector<Triplet> t;
  t.reserve(values_.size());
  for (int r = 0; r < n_rows_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      t.push_back({r, col_idx_[k], values_[k]});
  return t;
}

}  // namespace sharpqos
