#include "amref/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace amref::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

int Tape::push(Matrix value, std::function<void(Tape&, int)> back) {
  Node n;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::input(Matrix value) { return {push(std::move(value), nullptr)}; }

Var Tape::add(Var a, Var b) {
  int ia = a.idx, ib = b.idx;
  return {push(nodes_[ia].value + nodes_[ib].value,
               [ia, ib](Tape& t, int self) {
                 t.grad_ref(ia) += t.nodes_[self].grad;
                 t.grad_ref(ib) += t.nodes_[self].grad;
               })};
}

Var Tape::sub(Var a, Var b) {
  int ia = a.idx, ib = b.idx;
  return {push(nodes_[ia].value - nodes_[ib].value,
               [ia, ib](Tape& t, int self) {
                 t.grad_ref(ia) += t.nodes_[self].grad;
                 t.grad_ref(ib) -= t.nodes_[self].grad;
               })};
}

Var Tape::mul(Var a, Var b) {
  int ia = a.idx, ib = b.idx;
  return {push(nodes_[ia].value.cwiseProduct(nodes_[ib].value),
               [ia, ib](Tape& t, int self) {
                 const Matrix& g = t.nodes_[self].grad;
                 t.grad_ref(ia) += g.cwiseProduct(t.nodes_[ib].value);
                 t.grad_ref(ib) += g.cwiseProduct(t.nodes_[ia].value);
               })};
}

Var Tape::matmul(Var a, Var b) {
  int ia = a.idx, ib = b.idx;
  if (nodes_[ia].value.cols() != nodes_[ib].value.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree");
  }
  return {push(nodes_[ia].value * nodes_[ib].value,
               [ia, ib](Tape& t, int self) {
                 const Matrix& g = t.nodes_[self].grad;
                 t.grad_ref(ia) += g * t.nodes_[ib].value.transpose();
                 t.grad_ref(ib) += t.nodes_[ia].value.transpose() * g;
               })};
}

Var Tape::scale(Var a, double s) {
  int ia = a.idx;
  return {push(nodes_[ia].value * s, [ia, s](Tape& t, int self) {
            t.grad_ref(ia) += t.nodes_[self].grad * s;
          })};
}

Var Tape::add_rowvec(Var a, Var row) {
  int ia = a.idx, ir = row.idx;
  if (nodes_[ir].value.rows() != 1 ||
      nodes_[ir].value.cols() != nodes_[ia].value.cols()) {
    throw std::invalid_argument("add_rowvec: row must be 1 x cols(a)");
  }
  Matrix out = nodes_[ia].value;
  out.rowwise() += nodes_[ir].value.row(0);
  return {push(std::move(out), [ia, ir](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            t.grad_ref(ia) += g;
            t.grad_ref(ir) += g.colwise().sum();
          })};
}

Var Tape::transpose(Var a) {
  int ia = a.idx;
  return {push(nodes_[ia].value.transpose(), [ia](Tape& t, int self) {
            t.grad_ref(ia) += t.nodes_[self].grad.transpose();
          })};
}

Var Tape::sigmoid(Var a) {
  int ia = a.idx;
  Matrix out = nodes_[ia].value.unaryExpr(
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return {push(std::move(out), [ia](Tape& t, int self) {
            const Matrix& y = t.nodes_[self].value;
            const Matrix& g = t.nodes_[self].grad;
            t.grad_ref(ia) +=
                g.cwiseProduct(y.cwiseProduct(Matrix::Ones(y.rows(), y.cols()) - y));
          })};
}

Var Tape::gelu(Var a) {
  int ia = a.idx;
  Matrix out = nodes_[ia].value.unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return {push(std::move(out), [ia](Tape& t, int self) {
            const Matrix& x = t.nodes_[ia].value;
            Matrix dgelu = x.unaryExpr([](double v) {
              double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
              double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
              return phi + v * pdf;
            });
            t.grad_ref(ia) += t.nodes_[self].grad.cwiseProduct(dgelu);
          })};
}

Var Tape::softmax_rows(Var a) {
  int ia = a.idx;
  Matrix out = nodes_[ia].value;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return {push(std::move(out), [ia](Tape& t, int self) {
            const Matrix& y = t.nodes_[self].value;
            const Matrix& g = t.nodes_[self].grad;
            Matrix gin(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
              double dot = g.row(r).dot(y.row(r));
              gin.row(r) = y.row(r).cwiseProduct(g.row(r).array().matrix() -
                                                 Matrix::Constant(1, y.cols(), dot));
            }
            t.grad_ref(ia) += gin;
          })};
}

Var Tape::row_mean(Var a) {
  int ia = a.idx;
  const Matrix& x = nodes_[ia].value;
  double inv = 1.0 / static_cast<double>(x.cols());
  Matrix out = x.rowwise().mean();
  return {push(std::move(out), [ia, inv](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            t.grad_ref(ia) +=
                (g * inv).replicate(1, t.nodes_[ia].value.cols());
          })};
}

Var Tape::hcat(const std::vector<Var>& cols) {
  if (cols.empty()) throw std::invalid_argument("hcat: no columns");
  Eigen::Index rows = nodes_[cols.front().idx].value.rows();
  Eigen::Index total = 0;
  std::vector<int> idxs;
  idxs.reserve(cols.size());
  for (Var c : cols) {
    if (nodes_[c.idx].value.rows() != rows) {
      throw std::invalid_argument("hcat: row counts disagree");
    }
    total += nodes_[c.idx].value.cols();
    idxs.push_back(c.idx);
  }
  Matrix out(rows, total);
  Eigen::Index off = 0;
  for (int i : idxs) {
    out.middleCols(off, nodes_[i].value.cols()) = nodes_[i].value;
    off += nodes_[i].value.cols();
  }
  return {push(std::move(out), [idxs](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            Eigen::Index off = 0;
            for (int i : idxs) {
              Eigen::Index w = t.nodes_[i].value.cols();
              t.grad_ref(i) += g.middleCols(off, w);
              off += w;
            }
          })};
}

Var Tape::sum(Var a) {
  int ia = a.idx;
  Matrix out(1, 1);
  out(0, 0) = nodes_[ia].value.sum();
  return {push(std::move(out), [ia](Tape& t, int self) {
            const Matrix& x = t.nodes_[ia].value;
            t.grad_ref(ia) +=
                Matrix::Constant(x.rows(), x.cols(), t.nodes_[self].grad(0, 0));
          })};
}

void Tape::seed(Var v, const Matrix& g) {
  if (g.rows() != nodes_[v.idx].value.rows() ||
      g.cols() != nodes_[v.idx].value.cols()) {
    throw std::invalid_argument("seed: gradient shape disagrees with value");
  }
  nodes_[v.idx].grad += g;
}

void Tape::backward() {
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].back && nodes_[i].grad.cwiseAbs().sum() != 0.0) {
      nodes_[i].back(*this, i);
    }
  }
}

void Tape::zero_grads() {
  for (auto& n : nodes_) n.grad.setZero();
}

}  // namespace amref::ad
