#pragma once

#include <Eigen/Dense>

namespace amref {

using Matrix = Eigen::MatrixXd;

// Weights and constants of the composite objective. `smooth` and `eps`
// stabilise the Dice ratio, `w_fp` scales the false-positive penalty and
// `alpha_seg` weighs the segmentation term against classification.
struct LossConfig {
  double smooth = 1.0;
  double eps = 1e-6;
  double w_fp = 2.0;
  double alpha_seg = 1.0;

  void validate() const;
};

// Soft Dice score: (2*|X∩Y| + smooth + eps) / (|X| + |Y| + smooth + eps),
// with |X∩Y| = Σ pred·target, |X| = Σ pred, |Y| = Σ target.
double soft_dice_score(const Matrix& pred, const Matrix& target,
                       const LossConfig& cfg);

// Same ratio with the denominator inflated by (w_fp - 1) * FP,
// FP = Σ pred·(1-target). Degenerates to soft_dice_score at w_fp = 1.
double fp_dice_score(const Matrix& pred, const Matrix& target,
                     const LossConfig& cfg);

// Segmentation loss: 1 - fp_dice_score.
double seg_loss(const Matrix& pred, const Matrix& target, const LossConfig& cfg);

// d seg_loss / d pred, analytic.
Matrix seg_loss_grad(const Matrix& pred, const Matrix& target,
                     const LossConfig& cfg);

// Mean over findings of binary cross-entropy on logistic(logit).
double cls_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels);

// d cls_loss / d logits, analytic: (sigmoid(z) - y) / K.
Eigen::VectorXd cls_loss_grad(const Eigen::VectorXd& logits,
                              const Eigen::VectorXd& labels);

// alpha_seg * seg + cls.
double total_loss(double cls, double seg, const LossConfig& cfg);

}  // namespace amref
