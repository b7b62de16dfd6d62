#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace amref::ad {

using Matrix = Eigen::MatrixXd;

// Handle into a Tape node.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense double matrices. Nodes are created by the
// op builders below; backward() walks the tape once in reverse after the
// output gradients have been seeded with seed().
class Tape {
 public:
  Var input(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.idx].value; }
  const Matrix& grad(Var v) const { return nodes_[v.idx].grad; }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var matmul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var row);  // broadcast a 1xM row over every row of a
  Var transpose(Var a);
  Var sigmoid(Var a);
  Var gelu(Var a);
  Var softmax_rows(Var a);
  Var row_mean(Var a);  // NxM -> Nx1
  Var hcat(const std::vector<Var>& cols);
  Var sum(Var a);  // 1x1

  void seed(Var v, const Matrix& g);
  void backward();
  void zero_grads();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int)> back;  // pulls this node's grad into parents
  };

  int push(Matrix value, std::function<void(Tape&, int)> back);
  Matrix& grad_ref(int idx) { return nodes_[idx].grad; }

  std::vector<Node> nodes_;
};

}  // namespace amref::ad
