#pragma once

#include <Eigen/Dense>
#include <functional>

namespace sharpqos::ball {

// Numerical guards for the Poincare ball. Points are kept strictly inside the
// ball of radius 1/sqrt(c): we clamp to (1 - kBallEps)/sqrt(c) before any
// artanh, and cap the artanh argument itself at 1 - kAtanhEps.
inline constexpr double kBallEps = 1e-5;
inline constexpr double kAtanhEps = 1e-12;
inline constexpr double kCurvatureEps = 1e-5;

/// Trainable curvature c = softplus(raw) + eps, strictly positive for any raw.
struct Curvature {
  double raw = 0.0;
  double epsilon = kCurvatureEps;
  double value() const;
  /// dc/draw = sigmoid(raw)
  double dvalue_draw() const;
};

double softplus(double x);

/// tanh(x)/x with the x -> 0 limit handled.
double tanh_over_x(double x);
/// artanh(x)/x with the x -> 0 limit handled; |x| must be < 1.
double artanh_over_x(double x);
double artanh(double x);

/// Rescales any row with c*||row||^2 >= 1 back to the guard radius. Rows of
/// `x` are ball points.
void clamp_to_ball(Eigen::MatrixXd& x, double c);

/// Exponential map at the origin, applied row-wise: v -> tanh(sqrt(c)||v||) *
/// v / (sqrt(c)||v||). The zero row maps to the origin.
Eigen::MatrixXd exp0(const Eigen::MatrixXd& tangent, double c);

/// Logarithmic map at the origin, applied row-wise (inverse of exp0). Input
/// rows are clamped inside the ball first.
Eigen::MatrixXd log0(const Eigen::MatrixXd& point, double c);

/// Mobius addition x (+)_c y applied row-wise. `y` may have one row, in which
/// case it broadcasts over the rows of `x`.
Eigen::MatrixXd mobius_add(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double c);

/// Mobius matrix-vector product: exp0(log0(x) * W), rows of x are points.
Eigen::MatrixXd mobius_matvec(const Eigen::MatrixXd& weight, const Eigen::MatrixXd& x, double c);

/// Wrapped activation exp0(sigma(log0(x))) for an elementwise sigma.
Eigen::MatrixXd wrapped_activation(const Eigen::MatrixXd& x, double c,
                                   const std::function<double(double)>& sigma);

/// Conformal factor lambda_x = 2 / (1 - c||x||^2). Not used by any layer;
/// provided because the ball metric g_x = lambda_x^2 g_E is part of the
/// geometry this module implements.
double conformal_factor(const Eigen::VectorXd& x, double c);

}  // namespace sharpqos::ball
