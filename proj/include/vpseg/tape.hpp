#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "vpseg/image.hpp"
#include "vpseg/tensor.hpp"

namespace vpseg {

// Reverse-mode tape for one forward pass. Nodes are appended in execution
// order, which is a topological order, so the backward sweep visits each node
// exactly once by walking the node list in reverse.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated; empty means "no incoming gradient yet"
    // Scalar reductions also keep their 64-bit value; finite-difference
    // checks read it to avoid the f32 quantization of `value`.
    double scalar64 = std::numeric_limits<double>::quiet_NaN();
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;  // pulls node grad into parents
  };

  int add_node(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward);

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  // Accumulate g into node id's gradient buffer.
  void accumulate(int id, const Tensor& g);

  // Seed the (scalar) root with gradient 1 and sweep the tape in reverse.
  void backward(int root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const { return tape->value(id); }
  const Tensor& grad() const { return tape->grad(id); }
};

namespace ad {

Var leaf(Tape& tape, Tensor value, bool requires_grad);
Var constant(Tape& tape, Tensor value);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var a, float scale, float shift);
// scores + bias broadcast to every row (bias is rank-1 of length cols).
Var add_row_broadcast(Var a, Var bias);
// column vector (rank-1 of length rows) added to every column.
Var add_col_broadcast(Var a, Var bias);
Var softmax_rows(Var x);
Var logistic(Var x);
Var reshape(Var a, const std::vector<int>& shape);
// out[:, j] = a[:, idx[j]]; repeated indices scatter-add in backward.
Var gather_cols(Var a, std::vector<int> idx);
Var concat_cols(const std::vector<Var>& parts);
Var bilinear_resize(Var x, int out_h, int out_w);
// Single-head attention block shared by every module: softmax(q^T k / sqrt(c)
// [+ bias]) applied to v, optionally with the residual +q of Eq. CA_E.
Var cross_attention(Var q, Var k, Var v, const Var* bias, bool residual);
Var sum_all(Var a);
// Mean pixelwise softmax cross-entropy over non-ignored labels.
Var cross_entropy_mean(Var logits, const LabelMap& labels, std::uint16_t ignore_label);

}  // namespace ad

// Max over coordinates of |analytic - central difference| / max(1, |central|).
// f must produce a scalar node from the leaf it is handed.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, float eps);

}  // namespace vpseg
