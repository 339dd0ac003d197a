#pragma once

#include <Eigen/Dense>

namespace sharpqos {

/// AdamW with decoupled weight decay over a flat parameter vector. `decay_mask`
/// is 1 for parameters subject to decay, 0 otherwise (routing logits and
/// curvature raws are excluded by the caller).
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW(Eigen::Index size, Options opt)
      : opt_(opt),
        m_(Eigen::VectorXd::Zero(size)),
        v_(Eigen::VectorXd::Zero(size)),
        decay_mask_(Eigen::VectorXd::Ones(size)) {}

  void set_decay_mask(const Eigen::VectorXd& mask) { decay_mask_ = mask; }
  const Options& options() const { return opt_; }
  long step_count() const { return step_; }

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++step_;
    m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
    v_.array() = opt_.beta2 * v_.array() + (1.0 - opt_.beta2) * grad.array().square();
    double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    Eigen::ArrayXd adam = (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + opt_.eps);
    params.array() -=
        opt_.lr * (adam + opt_.weight_decay * decay_mask_.array() * params.array());
  }

 private:
  Options opt_;
  long step_ = 0;
  Eigen::VectorXd m_, v_;
  Eigen::VectorXd decay_mask_;
};

}  // namespace sharpqos
