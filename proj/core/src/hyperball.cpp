#include "sharpqos/hyperball.hpp"

#include <cmath>
#include <stdexcept>

namespace sharpqos::ball {

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double Curvature::value() const { return softplus(raw) + epsilon; }

double Curvature::dvalue_draw() const { return 1.0 / (1.0 + std::exp(-raw)); }

double tanh_over_x(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 3.0;
  return std::tanh(x) / x;
}

double artanh(double x) {
  if (x >= 1.0 - kAtanhEps) x = 1.0 - kAtanhEps;
  if (x <= -1.0 + kAtanhEps) x = -1.0 + kAtanhEps;
  return std::atanh(x);
}

double artanh_over_x(double x) {
  if (std::abs(x) < 1e-8) return 1.0 + x * x / 3.0;
  return artanh(x) / x;
}

void clamp_to_ball(Eigen::MatrixXd& x, double c) {
  const double max_norm = (1.0 - kBallEps) / std::sqrt(c);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double n = x.row(i).norm();
    if (n > max_norm) x.row(i) *= max_norm / n;
  }
}

Eigen::MatrixXd exp0(const Eigen::MatrixXd& tangent, double c) {
  if (!tangent.allFinite()) throw std::invalid_argument("exp0: non-finite input");
  const double sc = std::sqrt(c);
  Eigen::MatrixXd out(tangent.rows(), tangent.cols());
  for (Eigen::Index i = 0; i < tangent.rows(); ++i) {
    double n = tangent.row(i).norm();
    out.row(i) = tanh_over_x(sc * n) * tangent.row(i);
  }
  clamp_to_ball(out, c);
  return out;
}

Eigen::MatrixXd log0(const Eigen::MatrixXd& point, double c) {
  if (!point.allFinite()) throw std::invalid_argument("log0: non-finite input");
  const double sc = std::sqrt(c);
  Eigen::MatrixXd p = point;
  clamp_to_ball(p, c);
  Eigen::MatrixXd out(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double n = p.row(i).norm();
    out.row(i) = artanh_over_x(sc * n) * p.row(i);
  }
  return out;
}

Eigen::MatrixXd mobius_add(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double c) {
  const bool broadcast = y.rows() == 1 && x.rows() != 1;
  if (!broadcast && y.rows() != x.rows())
    throw std::invalid_argument("mobius_add: row mismatch");
  if (y.cols() != x.cols()) throw std::invalid_argument("mobius_add: col mismatch");
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const auto yi = broadcast ? y.row(0) : y.row(i);
    double dot = xi.dot(yi);
    double nx2 = xi.squaredNorm();
    double ny2 = yi.squaredNorm();
    double alpha = 1.0 + 2.0 * c * dot + c * ny2;
    double beta = 1.0 - c * nx2;
    // denominator is (1 - c||x||||y||)^2 >= 0 at minimum; guard the degenerate
    // boundary case without perturbing the exact identity 0 (+) y = y
    double den = 1.0 + 2.0 * c * dot + c * c * nx2 * ny2;
    if (den < 1e-15) den = 1e-15;
    out.row(i) = (alpha * xi + beta * yi) / den;
  }
  clamp_to_ball(out, c);
  return out;
}

Eigen::MatrixXd mobius_matvec(const Eigen::MatrixXd& weight, const Eigen::MatrixXd& x, double c) {
  return exp0(log0(x, c) * weight, c);
}

Eigen::MatrixXd wrapped_activation(const Eigen::MatrixXd& x, double c,
                                   const std::function<double(double)>& sigma) {
  Eigen::MatrixXd t = log0(x, c);
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = sigma(t(i, j));
  return exp0(t, c);
}

double conformal_factor(const Eigen::VectorXd& x, double c) {
  return 2.0 / (1.0 - c * x.squaredNorm());
}

}  // namespace sharpqos::ball
