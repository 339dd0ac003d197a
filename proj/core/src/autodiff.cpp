#include "sharpqos/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "sharpqos/hyperball.hpp"

namespace sharpqos::ad {

namespace {

double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double sech2(double u) {
  double a = std::exp(-std::abs(u));
  double s = 2.0 * a / (1.0 + a * a);
  return s * s;
}

// d/du [tanh(u)/u] / u, with the series used near zero where the direct
// formula cancels catastrophically.
double tanh_ratio_deriv_over_u(double u) {
  double au = std::abs(u);
  if (au < 1e-3) {
    double u2 = u * u;
    return -2.0 / 3.0 + (8.0 / 15.0) * u2 - 0.32380952380952382 * u2 * u2;
  }
  double t = ball::tanh_over_x(u);
  return (sech2(u) - t) / (u * u);
}

// d/du [artanh(u)/u] / u, series near zero.
double artanh_ratio_deriv_over_u(double u) {
  double au = std::abs(u);
  if (au < 1e-3) {
    double u2 = u * u;
    return 2.0 / 3.0 + (4.0 / 5.0) * u2 + (6.0 / 7.0) * u2 * u2;
  }
  double a = ball::artanh_over_x(u);
  return (1.0 / (1.0 - u * u) - a) / (u * u);
}

}  // namespace

// ---- Tape ------------------------------------------------------------------

Var Tape::push(Eigen::MatrixXd value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.backward = std::move(fn);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_backward(Var v, BackwardFn fn) { nodes_[v.id].backward = std::move(fn); }

Var Tape::constant(Eigen::MatrixXd value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Eigen::MatrixXd value) { return push(std::move(value), true, nullptr); }

const Eigen::MatrixXd& Tape::value(Var v) const { return nodes_[v.id].value; }

double Tape::scalar(Var v) const {
  const Eigen::MatrixXd& m = nodes_[v.id].value;
  if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("Tape::scalar: not a 1x1 node");
  return m(0, 0);
}

bool Tape::requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

bool Tape::has_grad(Var v) const { return nodes_[v.id].grad_ready; }

Eigen::MatrixXd& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (!n.grad_ready) {
    n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

Eigen::MatrixXd Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.grad_ready) return Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Eigen::MatrixXd& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  grad_ref(v) += g;
}

void Tape::backward(Var root) {
  const Node& r = nodes_[root.id];
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw std::logic_error("Tape::backward: root must be scalar");
  grad_ref(root)(0, 0) += 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_ready && n.backward) n.backward(*this);
  }
}

void Tape::clear() { nodes_.clear(); }

// ---- elementwise and linear ops -------------------------------------------

Var add(Tape& t, Var a, Var b) {
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(t.value(a) + t.value(b), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      tp.accumulate(a, g);
      tp.accumulate(b, g);
    });
  return out;
}

Var sub(Tape& t, Var a, Var b) {
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(t.value(a) - t.value(b), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      tp.accumulate(a, g);
      tp.accumulate(b, -g);
    });
  return out;
}

Var neg(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Var out = t.push(-t.value(a), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) { tp.accumulate(a, -tp.grad_ref(out)); });
  return out;
}

Var hadamard(Tape& t, Var a, Var b) {
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(t.value(a).cwiseProduct(t.value(b)), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      tp.accumulate(a, g.cwiseProduct(tp.value(b)));
      tp.accumulate(b, g.cwiseProduct(tp.value(a)));
    });
  return out;
}

Var scale(Tape& t, Var a, double k) {
  bool rg = t.requires_grad(a);
  Var out = t.push(k * t.value(a), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) { tp.accumulate(a, k * tp.grad_ref(out)); });
  return out;
}

Var add_const(Tape& t, Var a, double k) {
  bool rg = t.requires_grad(a);
  Var out = t.push((t.value(a).array() + k).matrix(), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) { tp.accumulate(a, tp.grad_ref(out)); });
  return out;
}

Var relu(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Var out = t.push(t.value(a).cwiseMax(0.0), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      Eigen::MatrixXd mask = (tp.value(a).array() > 0.0).cast<double>().matrix();
      tp.accumulate(a, tp.grad_ref(out).cwiseProduct(mask));
    });
  return out;
}

Var sigmoid(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Eigen::MatrixXd s = t.value(a).unaryExpr([](double x) { return sigmoid_s(x); });
  Var out = t.push(std::move(s), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& sv = tp.value(out);
      Eigen::MatrixXd d = (sv.array() * (1.0 - sv.array())).matrix();
      tp.accumulate(a, tp.grad_ref(out).cwiseProduct(d));
    });
  return out;
}

Var exp_ew(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Var out = t.push(t.value(a).array().exp().matrix(), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      tp.accumulate(a, tp.grad_ref(out).cwiseProduct(tp.value(out)));
    });
  return out;
}

Var softplus_ew(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Eigen::MatrixXd v = t.value(a).unaryExpr([](double x) { return ball::softplus(x); });
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      Eigen::MatrixXd d = tp.value(a).unaryExpr([](double x) { return sigmoid_s(x); });
      tp.accumulate(a, tp.grad_ref(out).cwiseProduct(d));
    });
  return out;
}

Var recip(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Var out = t.push(t.value(a).cwiseInverse(), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& y = tp.value(out);
      tp.accumulate(a, -tp.grad_ref(out).cwiseProduct(y).cwiseProduct(y));
    });
  return out;
}

Var matmul(Tape& t, Var a, Var b) {
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(t.value(a) * t.value(b), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
      if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
    });
  return out;
}

Var matmul_nt(Tape& t, Var a, Var b) {
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(t.value(a) * t.value(b).transpose(), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b));
      if (tp.requires_grad(b)) tp.accumulate(b, g.transpose() * tp.value(a));
    });
  return out;
}

Var spmm(Tape& t, const CsrMatrix& s, const CsrMatrix& st, Var x) {
  bool rg = t.requires_grad(x);
  Var out = t.push(s.multiply(t.value(x)), rg, nullptr);
  if (rg) {
    // capture the transpose by value: CSR matrices are small relative to
    // feature tensors and the caller's graph may go out of scope
    CsrMatrix stc = st;
    t.set_backward(out, [=, stc = std::move(stc)](Tape& tp) {
      tp.accumulate(x, stc.multiply(tp.grad_ref(out)));
    });
  }
  return out;
}

Var add_rowvec(Tape& t, Var x, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(x).cols())
    throw std::invalid_argument("add_rowvec: row must be 1 x cols(x)");
  bool rg = t.requires_grad(x) || t.requires_grad(row);
  Eigen::MatrixXd v = t.value(x);
  v.rowwise() += t.value(row).row(0);
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      tp.accumulate(x, g);
      if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
    });
  return out;
}

Var mul_rowvec(Tape& t, Var x, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(x).cols())
    throw std::invalid_argument("mul_rowvec: row must be 1 x cols(x)");
  bool rg = t.requires_grad(x) || t.requires_grad(row);
  Eigen::MatrixXd v = (t.value(x).array().rowwise() * t.value(row).row(0).array()).matrix();
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      if (tp.requires_grad(x))
        tp.accumulate(x, (g.array().rowwise() * tp.value(row).row(0).array()).matrix());
      if (tp.requires_grad(row))
        tp.accumulate(row, (g.cwiseProduct(tp.value(x))).colwise().sum());
    });
  return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.value(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    v.middleCols(off, t.value(p).cols()) = t.value(p);
    off += t.value(p).cols();
  }
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg) {
    std::vector<Var> ps = parts;
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      Eigen::Index o = 0;
      for (Var p : ps) {
        Eigen::Index c = tp.value(p).cols();
        tp.accumulate(p, g.middleCols(o, c));
        o += c;
      }
    });
  }
  return out;
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    v.middleRows(off, t.value(p).rows()) = t.value(p);
    off += t.value(p).rows();
  }
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg) {
    std::vector<Var> ps = parts;
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      Eigen::Index o = 0;
      for (Var p : ps) {
        Eigen::Index r = tp.value(p).rows();
        tp.accumulate(p, g.middleRows(o, r));
        o += r;
      }
    });
  }
  return out;
}

Var slice_rows(Tape& t, Var a, int begin, int count) {
  bool rg = t.requires_grad(a);
  Var out = t.push(t.value(a).middleRows(begin, count), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(tp.value(a).rows(), tp.value(a).cols());
      g.middleRows(begin, count) = tp.grad_ref(out);
      tp.accumulate(a, g);
    });
  return out;
}

Var sum_all(Tape& t, Var a) {
  bool rg = t.requires_grad(a);
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = t.value(a).sum();
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      double g = tp.grad_ref(out)(0, 0);
      tp.accumulate(a, Eigen::MatrixXd::Constant(tp.value(a).rows(), tp.value(a).cols(), g));
    });
  return out;
}

Var layer_norm_core(Tape& t, Var x, double eps) {
  const Eigen::MatrixXd& xv = t.value(x);
  const Eigen::Index d = xv.cols();
  Eigen::VectorXd inv(xv.rows());
  Eigen::MatrixXd y(xv.rows(), d);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().mean();
    inv(i) = 1.0 / std::sqrt(var + eps);
    y.row(i) = ((xv.row(i).array() - mu) * inv(i)).matrix();
  }
  bool rg = t.requires_grad(x);
  Var out = t.push(std::move(y), rg, nullptr);
  if (rg)
    t.set_backward(out, [=, inv = std::move(inv)](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      const Eigen::MatrixXd& yv = tp.value(out);
      Eigen::MatrixXd gx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        double gmean = g.row(i).mean();
        double gymean = g.row(i).cwiseProduct(yv.row(i)).mean();
        gx.row(i) = (inv(i) * (g.row(i).array() - gmean - yv.row(i).array() * gymean)).matrix();
      }
      tp.accumulate(x, gx);
    });
  return out;
}

// ---- Poincare-ball ops ------------------------------------------------------

namespace {

// Backward through the safety rescale of rows that land outside the guard
// radius. `w` is the unclamped row, g is rewritten in place to the gradient
// w.r.t. w; returns the curvature contribution.
double clamp_backward_row(Eigen::RowVectorXd& g, const Eigen::RowVectorXd& w, double radius,
                          double c) {
  double n = w.norm();
  Eigen::RowVectorXd what = w / n;
  double gdotw = g.dot(what);
  double cbar = gdotw * (-radius / (2.0 * c));
  g = (radius / n) * (g - gdotw * what);
  return cbar;
}

}  // namespace

Var exp0(Tape& t, Var tangent, Var c) {
  const Eigen::MatrixXd& v = t.value(tangent);
  const double cv = t.scalar(c);
  const double sc = std::sqrt(cv);
  const double radius = (1.0 - ball::kBallEps) / sc;
  const Eigen::Index n = v.rows();

  Eigen::VectorXd norms(n);
  Eigen::MatrixXd raw(n, v.cols());
  std::vector<char> clamped(static_cast<std::size_t>(n), 0);
  Eigen::MatrixXd outv(n, v.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    norms(i) = v.row(i).norm();
    raw.row(i) = ball::tanh_over_x(sc * norms(i)) * v.row(i);
    double rn = raw.row(i).norm();
    if (rn > radius) {
      clamped[static_cast<std::size_t>(i)] = 1;
      outv.row(i) = raw.row(i) * (radius / rn);
    } else {
      outv.row(i) = raw.row(i);
    }
  }

  bool rg = t.requires_grad(tangent) || t.requires_grad(c);
  Var out = t.push(std::move(outv), rg, nullptr);
  if (rg)
    t.set_backward(out, [=, norms = std::move(norms), raw = std::move(raw),
                         clamped = std::move(clamped)](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      const Eigen::MatrixXd& vv = tp.value(tangent);
      Eigen::MatrixXd gv = Eigen::MatrixXd::Zero(vv.rows(), vv.cols());
      double cbar = 0.0;
      for (Eigen::Index i = 0; i < vv.rows(); ++i) {
        Eigen::RowVectorXd gi = g.row(i);
        if (clamped[static_cast<std::size_t>(i)])
          cbar += clamp_backward_row(gi, raw.row(i), radius, cv);
        double r = norms(i);
        double u = sc * r;
        double tu = ball::tanh_over_x(u);
        double dperu = tanh_ratio_deriv_over_u(u);  // T'(u)/u
        double gdotv = gi.dot(vv.row(i));
        gv.row(i) = tu * gi + (gdotv * cv * dperu) * vv.row(i);
        // dout/dc = T'(u) * r/(2 sc) * v ; T'(u) = dperu * u
        cbar += gdotv * dperu * u * r / (2.0 * sc);
      }
      tp.accumulate(tangent, gv);
      if (tp.requires_grad(c)) {
        Eigen::MatrixXd cg(1, 1);
        cg(0, 0) = cbar;
        tp.accumulate(c, cg);
      }
    });
  return out;
}

Var log0(Tape& t, Var point, Var c) {
  const Eigen::MatrixXd& x = t.value(point);
  const double cv = t.scalar(c);
  const double sc = std::sqrt(cv);
  const double radius = (1.0 - ball::kBallEps) / sc;
  const Eigen::Index n = x.rows();

  Eigen::VectorXd norms(n);
  std::vector<char> clamped(static_cast<std::size_t>(n), 0);
  Eigen::MatrixXd outv(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = x.row(i).norm();
    norms(i) = r;
    if (r > radius) {
      clamped[static_cast<std::size_t>(i)] = 1;
      // after the input clamp the effective argument is exactly 1 - kBallEps
      double k = ball::artanh(1.0 - ball::kBallEps) / sc;  // = A(u_R) * radius
      outv.row(i) = (k / r) * x.row(i);
    } else {
      outv.row(i) = ball::artanh_over_x(sc * r) * x.row(i);
    }
  }

  bool rg = t.requires_grad(point) || t.requires_grad(c);
  Var out = t.push(std::move(outv), rg, nullptr);
  if (rg)
    t.set_backward(out, [=, norms = std::move(norms), clamped = std::move(clamped)](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      const Eigen::MatrixXd& xv = tp.value(point);
      Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(xv.rows(), xv.cols());
      double cbar = 0.0;
      const double atr = ball::artanh(1.0 - ball::kBallEps);
      for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        double r = norms(i);
        const Eigen::RowVectorXd gi = g.row(i);
        if (clamped[static_cast<std::size_t>(i)]) {
          // out = (artanh(1-eps)/sc) * x/r : gradient tangent to the sphere
          double k = atr / sc;
          Eigen::RowVectorXd xhat = xv.row(i) / r;
          double gdotx = gi.dot(xhat);
          gx.row(i) = (k / r) * (gi - gdotx * xhat);
          cbar += gdotx * (-k / (2.0 * cv)) * 1.0;  // d(k)/dc = -k/(2c)
          continue;
        }
        double u = sc * r;
        double au = ball::artanh_over_x(u);
        double dperu = artanh_ratio_deriv_over_u(u);  // A'(u)/u
        double gdotx = gi.dot(xv.row(i));
        gx.row(i) = au * gi + (gdotx * cv * dperu) * xv.row(i);
        cbar += gdotx * dperu * u * r / (2.0 * sc);
      }
      tp.accumulate(point, gx);
      if (tp.requires_grad(c)) {
        Eigen::MatrixXd cg(1, 1);
        cg(0, 0) = cbar;
        tp.accumulate(c, cg);
      }
    });
  return out;
}

Var mobius_add(Tape& t, Var x, Var y, Var c) {
  const Eigen::MatrixXd& xv = t.value(x);
  const Eigen::MatrixXd& yv = t.value(y);
  const bool bcast = yv.rows() == 1 && xv.rows() != 1;
  if (!bcast && yv.rows() != xv.rows()) throw std::invalid_argument("mobius_add: row mismatch");
  if (yv.cols() != xv.cols()) throw std::invalid_argument("mobius_add: col mismatch");
  const double cv = t.scalar(c);
  const double radius = (1.0 - ball::kBallEps) / std::sqrt(cv);
  const Eigen::Index n = xv.rows();

  Eigen::MatrixXd raw(n, xv.cols());
  Eigen::MatrixXd outv(n, xv.cols());
  Eigen::VectorXd dens(n);
  std::vector<char> clamped(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto xi = xv.row(i);
    const auto yi = bcast ? yv.row(0) : yv.row(i);
    double dot = xi.dot(yi);
    double p = xi.squaredNorm();
    double q = yi.squaredNorm();
    double alpha = 1.0 + 2.0 * cv * dot + cv * q;
    double beta = 1.0 - cv * p;
    double den = 1.0 + 2.0 * cv * dot + cv * cv * p * q;
    if (den < 1e-15) den = 1e-15;
    dens(i) = den;
    raw.row(i) = (alpha * xi + beta * yi) / den;
    double rn = raw.row(i).norm();
    if (rn > radius) {
      clamped[static_cast<std::size_t>(i)] = 1;
      outv.row(i) = raw.row(i) * (radius / rn);
    } else {
      outv.row(i) = raw.row(i);
    }
  }

  bool rg = t.requires_grad(x) || t.requires_grad(y) || t.requires_grad(c);
  Var out = t.push(std::move(outv), rg, nullptr);
  if (rg)
    t.set_backward(out, [=, raw = std::move(raw), dens = std::move(dens),
                         clamped = std::move(clamped)](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      const Eigen::MatrixXd& xm = tp.value(x);
      const Eigen::MatrixXd& ym = tp.value(y);
      Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(xm.rows(), xm.cols());
      Eigen::MatrixXd gy = Eigen::MatrixXd::Zero(ym.rows(), ym.cols());
      double cbar = 0.0;
      for (Eigen::Index i = 0; i < xm.rows(); ++i) {
        const Eigen::RowVectorXd xi = xm.row(i);
        const Eigen::RowVectorXd yi = bcast ? ym.row(0) : ym.row(i);
        Eigen::RowVectorXd gi = g.row(i);
        if (clamped[static_cast<std::size_t>(i)])
          cbar += clamp_backward_row(gi, raw.row(i), radius, cv);
        double dot = xi.dot(yi);
        double p = xi.squaredNorm();
        double q = yi.squaredNorm();
        double alpha = 1.0 + 2.0 * cv * dot + cv * q;
        double beta = 1.0 - cv * p;
        double den = dens(i);
        Eigen::RowVectorXd o = raw.row(i);
        double gdx = gi.dot(xi), gdy = gi.dot(yi), gdo = gi.dot(o);
        gx.row(i) = (gdx * 2.0 * cv * yi + alpha * gi - gdy * 2.0 * cv * xi) / den -
                    (gdo / den) * (2.0 * cv * yi + 2.0 * cv * cv * q * xi);
        Eigen::RowVectorXd gyi =
            (gdx * (2.0 * cv * xi + 2.0 * cv * yi) + beta * gi) / den -
            (gdo / den) * (2.0 * cv * xi + 2.0 * cv * cv * p * yi);
        if (bcast)
          gy.row(0) += gyi;
        else
          gy.row(i) = gyi;
        cbar += (gdx * (2.0 * dot + q) - gdy * p) / den -
                (gdo / den) * (2.0 * dot + 2.0 * cv * p * q);
      }
      tp.accumulate(x, gx);
      if (tp.requires_grad(y)) tp.accumulate(y, gy);
      if (tp.requires_grad(c)) {
        Eigen::MatrixXd cg(1, 1);
        cg(0, 0) = cbar;
        tp.accumulate(c, cg);
      }
    });
  return out;
}

// ---- gates and losses -------------------------------------------------------

Var hard_concrete_gate(Tape& t, Var log_alpha, double u, double tau, double gamma,
                       double beta_stretch) {
  if (!(u > 0.0 && u < 1.0))
    throw std::invalid_argument("hard_concrete_gate: u must be strictly inside (0,1)");
  double a = t.scalar(log_alpha);
  double logit = std::log(u) - std::log1p(-u) + a;
  double s = sigmoid_s(logit / tau);
  double stretched = s * (gamma - beta_stretch) + beta_stretch;
  double gate = std::min(1.0, std::max(0.0, stretched));
  bool rg = t.requires_grad(log_alpha);
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = gate;
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg) {
    double deriv =
        (stretched > 0.0 && stretched < 1.0) ? (gamma - beta_stretch) * s * (1.0 - s) / tau : 0.0;
    t.set_backward(out, [=](Tape& tp) {
      Eigen::MatrixXd g(1, 1);
      g(0, 0) = tp.grad_ref(out)(0, 0) * deriv;
      tp.accumulate(log_alpha, g);
    });
  }
  return out;
}

Var masked_mae(Tape& t, Var pred, const std::vector<Triplet>& entries) {
  if (entries.empty()) throw std::invalid_argument("masked_mae: empty mask");
  const Eigen::MatrixXd& p = t.value(pred);
  double sum = 0.0;
  for (const Triplet& e : entries) sum += std::abs(e.value - p(e.row, e.col));
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = sum / static_cast<double>(entries.size());
  bool rg = t.requires_grad(pred);
  Var out = t.push(std::move(v), rg, nullptr);
  if (rg) {
    std::vector<Triplet> es = entries;
    t.set_backward(out, [=, es = std::move(es)](Tape& tp) {
      const Eigen::MatrixXd& pv = tp.value(pred);
      double g = tp.grad_ref(out)(0, 0) / static_cast<double>(es.size());
      Eigen::MatrixXd gp = Eigen::MatrixXd::Zero(pv.rows(), pv.cols());
      for (const Triplet& e : es) {
        double r = e.value - pv(e.row, e.col);
        double sgn = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
        gp(e.row, e.col) += -sgn * g;
      }
      tp.accumulate(pred, gp);
    });
  }
  return out;
}

Var mul_scalar(Tape& t, Var x, Var s) {
  if (t.value(s).rows() != 1 || t.value(s).cols() != 1)
    throw std::invalid_argument("mul_scalar: s must be 1x1");
  double sv = t.scalar(s);
  bool rg = t.requires_grad(x) || t.requires_grad(s);
  Var out = t.push(sv * t.value(x), rg, nullptr);
  if (rg)
    t.set_backward(out, [=](Tape& tp) {
      const Eigen::MatrixXd& g = tp.grad_ref(out);
      if (tp.requires_grad(x)) tp.accumulate(x, tp.scalar(s) * g);
      if (tp.requires_grad(s)) {
        Eigen::MatrixXd gs(1, 1);
        gs(0, 0) = g.cwiseProduct(tp.value(x)).sum();
        tp.accumulate(s, gs);
      }
    });
  return out;
}

}  // namespace sharpqos::ad
