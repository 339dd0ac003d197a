#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "sharpqos/sparse.hpp"

namespace sharpqos::ad {

class Tape;

/// Handle to a node on the tape. Scalars are 1x1 matrices.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using BackwardFn = std::function<void(Tape&)>;

/// Minimal reverse-mode tape over Eigen matrices. Nodes are created in
/// topological order; backward() walks them in reverse. Single-threaded,
/// fixed reduction order, hence bit-reproducible.
class Tape {
 public:
  Var constant(Eigen::MatrixXd value);
  Var leaf(Eigen::MatrixXd value);

  const Eigen::MatrixXd& value(Var v) const;
  double scalar(Var v) const;
  bool requires_grad(Var v) const;

  /// Gradient of a node after backward(); zero matrix if it never received one.
  Eigen::MatrixXd grad_of(Var v) const;

  void accumulate(Var v, const Eigen::MatrixXd& g);
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  void clear();

  Var push(Eigen::MatrixXd value, bool requires_grad, BackwardFn fn);
  void set_backward(Var v, BackwardFn fn);
  Eigen::MatrixXd& grad_ref(Var v);
  bool has_grad(Var v) const;

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool grad_ready = false;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise and linear ops -------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double k);
Var add_const(Tape& t, Var a, double k);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var exp_ew(Tape& t, Var a);
Var softplus_ew(Tape& t, Var a);
Var recip(Tape& t, Var a);

Var matmul(Tape& t, Var a, Var b);
/// a * b^T without materializing the transpose node.
Var matmul_nt(Tape& t, Var a, Var b);
/// S * x for a constant sparse S; st must be the transpose of s.
Var spmm(Tape& t, const CsrMatrix& s, const CsrMatrix& st, Var x);

Var add_rowvec(Tape& t, Var x, Var row);
Var mul_rowvec(Tape& t, Var x, Var row);

Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var a, int begin, int count);
Var sum_all(Tape& t, Var a);

/// Row-wise (x - mean) / sqrt(var + eps); affine scale/shift composed outside.
Var layer_norm_core(Tape& t, Var x, double eps = 1e-5);

// ---- Poincare-ball ops (curvature c is a positive 1x1 Var) ----------------

Var exp0(Tape& t, Var tangent, Var c);
Var log0(Tape& t, Var point, Var c);
/// Rows of x plus a broadcast row y (1 x d) or matching rows, Mobius-added.
Var mobius_add(Tape& t, Var x, Var y, Var c);

// ---- gates and losses ------------------------------------------------------

/// Stretched-sigmoid relaxation of a Bernoulli gate, differentiable in
/// log_alpha for a fixed noise draw u in (0,1).
Var hard_concrete_gate(Tape& t, Var log_alpha, double u, double tau, double gamma,
                       double beta_stretch);

/// Mean absolute error over the listed entries of a dense prediction.
Var masked_mae(Tape& t, Var pred, const std::vector<Triplet>& entries);

Var mul_scalar(Tape& t, Var x, Var s);

}  // namespace sharpqos::ad
