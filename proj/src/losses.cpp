#include "amref/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace amref {

namespace {

void check_pair(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("dice: pred and target shapes disagree");
  }
  if ((pred.array() < 0.0).any() || (pred.array() > 1.0).any()) {
    throw std::invalid_argument("dice: pred values must lie in [0,1]");
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void LossConfig::validate() const {
  if (eps <= 0.0) throw std::invalid_argument("loss.eps must be > 0");
  if (w_fp < 1.0) throw std::invalid_argument("loss.w_fp must be >= 1");
  if (smooth < 0.0) throw std::invalid_argument("loss.smooth must be >= 0");
  if (alpha_seg < 0.0) throw std::invalid_argument("loss.alpha_seg must be >= 0");
}

double soft_dice_score(const Matrix& pred, const Matrix& target,
                       const LossConfig& cfg) {
  check_pair(pred, target);
  double inter = pred.cwiseProduct(target).sum();
  double card = pred.sum() + target.sum();
  return (2.0 * inter + cfg.smooth + cfg.eps) / (card + cfg.smooth + cfg.eps);
}

double fp_dice_score(const Matrix& pred, const Matrix& target,
                     const LossConfig& cfg) {
  check_pair(pred, target);
  double inter = pred.cwiseProduct(target).sum();
  double fp = pred.sum() - inter;  // Σ pred·(1-target)
  double card = pred.sum() + target.sum() + (cfg.w_fp - 1.0) * fp;
  return (2.0 * inter + cfg.smooth + cfg.eps) / (card + cfg.smooth + cfg.eps);
}

double seg_loss(const Matrix& pred, const Matrix& target, const LossConfig& cfg) {
  return 1.0 - fp_dice_score(pred, target, cfg);
}

Matrix seg_loss_grad(const Matrix& pred, const Matrix& target,
                     const LossConfig& cfg) {
  check_pair(pred, target);
  double inter = pred.cwiseProduct(target).sum();
  double fp = pred.sum() - inter;
  double num = 2.0 * inter + cfg.smooth + cfg.eps;
  double den = pred.sum() + target.sum() + (cfg.w_fp - 1.0) * fp + cfg.smooth +
               cfg.eps;
  // dS/dp_i = (2 t_i * den - num * (1 + (w_fp-1)(1-t_i))) / den^2
  Matrix dscore =
      (2.0 * target.array() * den -
       num * (1.0 + (cfg.w_fp - 1.0) * (1.0 - target.array())))
          .matrix() /
      (den * den);
  return -dscore;
}

double cls_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels) {
  if (logits.size() != labels.size()) {
    throw std::invalid_argument("cls_loss: length mismatch");
  }
  if (logits.size() == 0) throw std::invalid_argument("cls_loss: empty input");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    double z = logits[i];
    // softplus(z) - y*z, numerically stable
    double sp = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    acc += sp - labels[i] * z;
  }
  return acc / static_cast<double>(logits.size());
}

Eigen::VectorXd cls_loss_grad(const Eigen::VectorXd& logits,
                              const Eigen::VectorXd& labels) {
  if (logits.size() != labels.size()) {
    throw std::invalid_argument("cls_loss: length mismatch");
  }
  Eigen::VectorXd g(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    g[i] = (sigmoid(logits[i]) - labels[i]) / static_cast<double>(logits.size());
  }
  return g;
}

double total_loss(double cls, double seg, const LossConfig& cfg) {
  if (!std::isfinite(cls) || !std::isfinite(seg)) {
    throw std::invalid_argument("total_loss: non-finite input");
  }
  return cfg.alpha_seg * seg + cls;
}

}  // namespace amref
