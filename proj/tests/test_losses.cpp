#include <cmath>
#include <stdexcept>

#include "doctest.h"

#include "amref/losses.hpp"
#include "amref/rng.hpp"

using namespace amref;

namespace {

LossConfig cfg_with(double smooth, double eps, double w_fp) {
  LossConfig c;
  c.smooth = smooth;
  c.eps = eps;
  c.w_fp = w_fp;
  return c;
}

std::pair<Matrix, Matrix> random_instance(Rng& rng, int max_side = 16) {
  int h = 1 + static_cast<int>(rng.below(max_side));
  int w = 1 + static_cast<int>(rng.below(max_side));
  Matrix pred(h, w), target(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      pred(i, j) = rng.uniform();
      target(i, j) = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
  }
  return {pred, target};
}

}  // namespace

TEST_CASE("soft dice: hand-computed example is 0.75") {
  Matrix pred(1, 4), target(1, 4);
  pred << 1, 1, 0, 0;
  target << 1, 0, 0, 0;
  CHECK(soft_dice_score(pred, target, cfg_with(1, 0, 2)) ==
        doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("fp dice: hand-computed example is 0.6") {
  Matrix pred(1, 4), target(1, 4);
  pred << 1, 1, 0, 0;
  target << 1, 0, 0, 0;
  CHECK(fp_dice_score(pred, target, cfg_with(1, 0, 2)) ==
        doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("soft dice: empty vs empty with smoothing is 1") {
  Matrix z = Matrix::Zero(2, 2);
  CHECK(soft_dice_score(z, z, cfg_with(1, 0, 2)) == 1.0);
}

TEST_CASE("soft dice: perfect overlap is exactly 1 with eps=0") {
  Matrix m(2, 3);
  m << 1, 0, 1, 0, 1, 0;
  CHECK(soft_dice_score(m, m, cfg_with(1, 0, 2)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(fp_dice_score(m, m, cfg_with(1, 0, 5)) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("fp dice equals soft dice at w_fp=1 on 1000 random instances") {
  Rng rng(101);
  LossConfig cfg = cfg_with(1, 1e-6, 1);
  for (int k = 0; k < 1000; ++k) {
    auto [pred, target] = random_instance(rng);
    CHECK(std::abs(fp_dice_score(pred, target, cfg) -
                   soft_dice_score(pred, target, cfg)) < 1e-12);
  }
}

TEST_CASE("fp dice is non-increasing in w_fp when FP > 0") {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    auto [pred, target] = random_instance(rng);
    double fp = (pred.array() * (1.0 - target.array())).sum();
    double a = fp_dice_score(pred, target, cfg_with(1, 1e-6, 1));
    double b = fp_dice_score(pred, target, cfg_with(1, 1e-6, 2));
    double c = fp_dice_score(pred, target, cfg_with(1, 1e-6, 4));
    if (fp > 0) {
      CHECK(a >= b);
      CHECK(b >= c);
    } else {
      CHECK(a == doctest::Approx(b).epsilon(1e-15));
    }
    CHECK(a > 0);
    CHECK(a <= 1.0);
    CHECK(c > 0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("scores are invariant under identical pixel permutation") {
  Rng rng(5);
  auto [pred, target] = random_instance(rng, 8);
  LossConfig cfg = cfg_with(1, 1e-6, 2);
  double before = fp_dice_score(pred, target, cfg);
  // reverse both in the same way
  Matrix p2 = pred.reverse();
  Matrix t2 = target.reverse();
  CHECK(fp_dice_score(p2, t2, cfg) == doctest::Approx(before).epsilon(1e-15));
}

TEST_CASE("seg loss: perfect prediction gives 0, inverted gives ~1") {
  Matrix target(2, 2);
  target << 1, 0, 0, 1;
  LossConfig cfg = cfg_with(1, 0, 2);
  CHECK(seg_loss(target, target, cfg) == doctest::Approx(0.0).epsilon(1e-15));
  Matrix inverted = Matrix::Ones(2, 2) - target;
  LossConfig harsh = cfg_with(0, 1e-6, 1);
  CHECK(seg_loss(inverted, target, harsh) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("seg loss gradient matches central finite differences") {
  Rng rng(202);
  LossConfig cfg = cfg_with(1, 1e-6, 2);
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    auto [pred, target] = random_instance(rng, 6);
    // keep pred off the [0,1] boundary so the +/- h probes stay valid
    pred = (pred.array() * 0.98 + 0.01).matrix();
    Matrix g = seg_loss_grad(pred, target, cfg);
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        Matrix pp = pred, pm = pred;
        pp(i, j) += h;
        pm(i, j) -= h;
        double fd = (seg_loss(pp, target, cfg) - seg_loss(pm, target, cfg)) /
                    (2.0 * h);
        double denom = std::max(std::abs(fd), 1e-8);
        CHECK(std::abs(g(i, j) - fd) / denom < 1e-4);
      }
    }
  }
}

TEST_CASE("cls loss: zero logits give ln 2, saturated correct gives ~0") {
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd labels(3);
  labels << 1, 0, 1;
  CHECK(cls_loss(logits, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Eigen::VectorXd hot(1), one(1);
  hot << 20.0;
  one << 1.0;
  CHECK(cls_loss(hot, one) < 1e-8);
}

TEST_CASE("cls loss gradient matches central finite differences") {
  Rng rng(303);
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    int n = 1 + static_cast<int>(rng.below(6));
    Eigen::VectorXd logits(n), labels(n);
    for (int i = 0; i < n; ++i) {
      logits(i) = 4.0 * (rng.uniform() - 0.5);
      labels(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    Eigen::VectorXd g = cls_loss_grad(logits, labels);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd lp = logits, lm = logits;
      lp(i) += h;
      lm(i) -= h;
      double fd = (cls_loss(lp, labels) - cls_loss(lm, labels)) / (2.0 * h);
      double denom = std::max(std::abs(fd), 1e-8);
      CHECK(std::abs(g(i) - fd) / denom < 1e-4);
    }
  }
}

TEST_CASE("total loss arithmetic and monotonicity") {
  LossConfig cfg;
  cfg.alpha_seg = 1.0;
  CHECK(total_loss(0.5, 0.25, cfg) == doctest::Approx(0.75));
  cfg.alpha_seg = 0.0;
  CHECK(total_loss(0.5, 123.0, cfg) == doctest::Approx(0.5));
  cfg.alpha_seg = 2.0;
  CHECK(total_loss(0.1, 0.3, cfg) >= total_loss(0.1, 0.2, cfg));
  CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, cfg), std::invalid_argument);
}

TEST_CASE("loss input validation") {
  LossConfig cfg;
  Matrix pred(2, 2), target(3, 2);
  pred.setConstant(0.5);
  target.setZero();
  CHECK_THROWS_AS(soft_dice_score(pred, target, cfg), std::invalid_argument);

  Matrix bad(2, 2);
  bad.setConstant(1.5);
  Matrix t(2, 2);
  t.setZero();
  CHECK_THROWS_AS(fp_dice_score(bad, t, cfg), std::invalid_argument);

  LossConfig broken;
  broken.w_fp = 0.5;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
  broken = LossConfig{};
  broken.eps = 0.0;
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}
